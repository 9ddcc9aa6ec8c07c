"""Agreement vectors between two blocked files.

Builds the comparison cube: per block pair, the agreement level of every
block-level variable, and per record pair within the block pair, the agreement
levels of every record-level variable. Record-level vectors are stored packed
as pattern ids (one small integer per record pair) plus a pattern -> levels
table and per-pair pattern histograms, which keeps likelihood tallies cheap at
million-pair scale.

Levels are 0-based in all stored arrays (0 = lowest agreement). The scalar
``compare_values`` entry point reports 1-based levels, with binary kinds using
1 = disagree, 2 = agree.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import SchemaError

KINDS = ("binary-exact", "numeric-absolute", "numeric-relative", "ordinal-multilevel")


@dataclass(frozen=True)
class ComparisonSpec:
    """How one variable is compared.

    kind:
        binary-exact        agree iff values are equal
        numeric-absolute    agree iff |a - b| < threshold
        numeric-relative    agree iff |a - b| <= fraction * max(a, b)
        ordinal-multilevel  level = 1 + length of the common prefix of the
                            value's ordered components (most significant first)
    """

    name: str
    kind: str
    threshold: float | None = None
    fraction: float | None = None
    levels: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown comparison kind {self.kind!r}")
        if self.kind == "numeric-absolute":
            if self.threshold is None or not self.threshold > 0:
                raise SchemaError(f"{self.name}: threshold must be > 0")
        if self.kind == "numeric-relative":
            if self.fraction is None or not 0 < self.fraction < 1:
                raise SchemaError(f"{self.name}: fraction must be in (0, 1)")
        if self.kind == "ordinal-multilevel":
            if self.levels < 2:
                raise SchemaError(f"{self.name}: levels must be >= 2")
        elif self.levels != 2:
            raise SchemaError(f"{self.name}: {self.kind} has exactly 2 levels")

    @property
    def level_count(self) -> int:
        return self.levels

    def to_json(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.kind == "numeric-absolute":
            out["threshold"] = self.threshold
        elif self.kind == "numeric-relative":
            out["fraction"] = self.fraction
        elif self.kind == "ordinal-multilevel":
            out["levels"] = self.levels
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ComparisonSpec":
        try:
            name, kind = obj["name"], obj["kind"]
        except KeyError as exc:
            raise SchemaError(f"comparison spec missing field {exc}") from exc
        return cls(
            name=name,
            kind=kind,
            threshold=obj.get("threshold"),
            fraction=obj.get("fraction"),
            levels=int(obj.get("levels", 2)),
        )


@dataclass
class ComparisonSchema:
    """Ordered comparison specs for block-level and record-level variables."""

    block: list[ComparisonSpec]
    record: list[ComparisonSpec]

    @property
    def p(self) -> int:
        return len(self.block)

    @property
    def k(self) -> int:
        return len(self.record)

    def to_json(self) -> dict:
        return {
            "block_variables": [s.to_json() for s in self.block],
            "record_variables": [s.to_json() for s in self.record],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ComparisonSchema":
        return cls(
            block=[ComparisonSpec.from_json(o) for o in obj.get("block_variables", [])],
            record=[ComparisonSpec.from_json(o) for o in obj.get("record_variables", [])],
        )


def load_schema(path) -> ComparisonSchema:
    with open(path) as fh:
        return ComparisonSchema.from_json(json.load(fh))


def save_schema(schema: ComparisonSchema, path) -> None:
    with open(path, "w") as fh:
        json.dump(schema.to_json(), fh, indent=2)
        fh.write("\n")


@dataclass
class BlockedFile:
    """A file's records partitioned into blocks.

    block_values[s] holds the P block-level values shared by block s;
    record_values[s][i] holds the K record-level values of record i in s.
    """

    file_id: str
    block_ids: list[str]
    block_values: list[tuple]
    record_ids: list[list[str]]
    record_values: list[list[tuple]]

    def __post_init__(self):
        s = len(self.block_ids)
        if not (len(self.block_values) == len(self.record_ids) == len(self.record_values) == s):
            raise SchemaError(f"{self.file_id}: inconsistent block counts")
        if len(set(self.block_ids)) != s:
            raise SchemaError(f"{self.file_id}: duplicate block ids")
        p = len(self.block_values[0]) if s else 0
        seen = set()
        for bid, bv, rids, rvals in zip(
            self.block_ids, self.block_values, self.record_ids, self.record_values
        ):
            if len(bv) != p:
                raise SchemaError(f"{self.file_id}/{bid}: block arity != {p}")
            if len(rids) != len(rvals) or not rids:
                raise SchemaError(f"{self.file_id}/{bid}: empty block or id/value mismatch")
            k = len(rvals[0])
            for rid, rv in zip(rids, rvals):
                if rid in seen:
                    raise SchemaError(f"{self.file_id}: duplicate record id {rid!r}")
                seen.add(rid)
                if len(rv) != k:
                    raise SchemaError(f"{self.file_id}/{bid}/{rid}: record arity != {k}")

    @property
    def n_blocks(self) -> int:
        return len(self.block_ids)

    @property
    def block_sizes(self) -> np.ndarray:
        return np.array([len(r) for r in self.record_ids], dtype=np.int64)

    @property
    def n_records(self) -> int:
        return int(self.block_sizes.sum())

    @property
    def p(self) -> int:
        return len(self.block_values[0]) if self.block_ids else 0

    @property
    def k(self) -> int:
        return len(self.record_values[0][0]) if self.block_ids else 0


def _is_missing(v) -> bool:
    if v is None or v == "":
        return True
    return isinstance(v, float) and math.isnan(v)


def _as_float(v, spec: ComparisonSpec) -> float:
    try:
        return float(v)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{spec.name}: non-numeric value {v!r} for kind {spec.kind}") from exc


def _ordinal_components(v, spec: ComparisonSpec) -> tuple:
    """Split an ordinal value into its levels-1 ordered components."""
    n = spec.levels - 1
    if isinstance(v, str):
        parts = v.split("-")
    elif isinstance(v, (tuple, list)):
        parts = list(v)
    else:
        raise SchemaError(f"{spec.name}: ordinal value {v!r} is not a string or sequence")
    if len(parts) != n:
        raise SchemaError(
            f"{spec.name}: ordinal value {v!r} has {len(parts)} components, expected {n}"
        )
    return tuple(parts)


def compare_values(a, b, spec: ComparisonSpec) -> int:
    """Agreement level of two non-missing values under ``spec``, 1-based.

    Binary kinds return 1 = disagree, 2 = agree; ordinal kinds return a level
    in [1, spec.levels].
    """
    if _is_missing(a) or _is_missing(b):
        raise SchemaError(f"{spec.name}: compare_values requires non-missing values")
    if spec.kind == "binary-exact":
        return 2 if a == b else 1
    if spec.kind == "numeric-absolute":
        fa, fb = _as_float(a, spec), _as_float(b, spec)
        return 2 if abs(fa - fb) < spec.threshold else 1
    if spec.kind == "numeric-relative":
        fa, fb = _as_float(a, spec), _as_float(b, spec)
        return 2 if abs(fa - fb) <= spec.fraction * max(fa, fb) else 1
    # ordinal-multilevel
    ca = _ordinal_components(a, spec)
    cb = _ordinal_components(b, spec)
    level = 1
    for xa, xb in zip(ca, cb):
        if str(xa) != str(xb):
            break
        level += 1
    return level


class _PreparedVariable:
    """One variable of one file, converted to arrays that compare fast."""

    def __init__(self, spec: ComparisonSpec, values: list, codebook: dict | None = None):
        self.spec = spec
        n = len(values)
        self.missing = np.array([_is_missing(v) for v in values], dtype=bool)
        if spec.kind == "binary-exact":
            codes = np.full(n, -1, dtype=np.int64)
            for i, v in enumerate(values):
                if not self.missing[i]:
                    codes[i] = codebook.setdefault(v, len(codebook))
            self.data = codes
        elif spec.kind in ("numeric-absolute", "numeric-relative"):
            arr = np.full(n, np.nan, dtype=np.float64)
            for i, v in enumerate(values):
                if not self.missing[i]:
                    arr[i] = _as_float(v, spec)
            self.data = arr
        else:
            comps = np.full((n, spec.levels - 1), -1, dtype=np.int64)
            for i, v in enumerate(values):
                if not self.missing[i]:
                    for c, part in enumerate(_ordinal_components(v, spec)):
                        comps[i, c] = codebook.setdefault((c, str(part)), len(codebook))
            self.data = comps


def _pair_levels(a: _PreparedVariable, b: _PreparedVariable) -> tuple[np.ndarray, int]:
    """(n_a, n_b) 0-based agreement levels; returns (levels, n_missing_pairs)."""
    spec = a.spec
    miss = a.missing[:, None] | b.missing[None, :]
    if spec.kind == "binary-exact":
        lev = (a.data[:, None] == b.data[None, :]).astype(np.uint8)
    elif spec.kind == "numeric-absolute":
        with np.errstate(invalid="ignore"):
            lev = (np.abs(a.data[:, None] - b.data[None, :]) < spec.threshold).astype(np.uint8)
    elif spec.kind == "numeric-relative":
        x, y = a.data[:, None], b.data[None, :]
        with np.errstate(invalid="ignore"):
            lev = (np.abs(x - y) <= spec.fraction * np.maximum(x, y)).astype(np.uint8)
    else:
        lev = np.zeros((len(a.missing), len(b.missing)), dtype=np.uint8)
        alive = np.ones_like(lev, dtype=bool)
        for c in range(spec.levels - 1):
            alive &= a.data[:, None, c] == b.data[None, :, c]
            lev += alive
    lev[miss] = 0
    return lev, int(miss.sum())


@dataclass
class ComparisonCube:
    """All block-pair and within-pair record-pair agreement levels.

    patterns[s][t] is an (n1s, n2t) int32 array of pattern ids; row i, column j
    is the record pair (i in block s of file 1, j in block t of file 2).
    pattern_levels[g, k] is the 0-based level of record variable k under
    pattern g. pair_hist[s, t, g] counts candidate pairs of (s, t) with pattern
    g; masked-out pairs (forced-agreement failures) are excluded from the
    histogram and can never be linked.
    """

    schema: ComparisonSchema
    n1: np.ndarray
    n2: np.ndarray
    block_levels: np.ndarray            # (S, T, P) uint8
    pattern_levels: np.ndarray          # (G, K) uint8
    patterns: list                      # [s][t] -> (n1s, n2t) int32
    pair_hist: np.ndarray               # (S, T, G) int64
    masks: list | None = None           # [s][t] -> bool array, or None = all candidates
    block_mask: np.ndarray | None = None  # (S, T) bool, or None = all candidates
    missing_comparisons: dict = field(default_factory=dict)
    f1_ids: tuple = ()
    f2_ids: tuple = ()

    @property
    def s_blocks(self) -> int:
        return len(self.n1)

    @property
    def t_blocks(self) -> int:
        return len(self.n2)

    @property
    def n_patterns(self) -> int:
        return self.pattern_levels.shape[0]

    def mask_for(self, s: int, t: int) -> np.ndarray | None:
        return None if self.masks is None else self.masks[s][t]

    def block_allowed(self, s: int, t: int) -> bool:
        return True if self.block_mask is None else bool(self.block_mask[s, t])

    def record_levels(self, s: int, t: int) -> np.ndarray:
        """(n1s, n2t, K) 0-based levels, reconstructed from the pattern table."""
        return self.pattern_levels[self.patterns[s][t]]

    def candidate_pairs(self) -> int:
        """Total number of candidate record pairs after masking."""
        return int(self.pair_hist.sum())


def _densify(codes_flat: np.ndarray, per_pair_shapes, pattern_codes: np.ndarray):
    """Map raw packed codes to dense pattern ids in pattern_codes order."""
    ids_flat = np.searchsorted(pattern_codes, codes_flat).astype(np.int32)
    out, pos = [], 0
    for shape in per_pair_shapes:
        n = shape[0] * shape[1]
        out.append(ids_flat[pos : pos + n].reshape(shape))
        pos += n
    return out


def build_comparison_cube(
    f1: BlockedFile,
    f2: BlockedFile,
    schema: ComparisonSchema,
    force_agreement: tuple[str, ...] = (),
) -> ComparisonCube:
    """Materialize every block and record comparison under ``schema``.

    ``force_agreement`` names variables whose exact agreement is required for a
    pair to be a link candidate; they are removed from the modeled comparison
    vector and turned into candidacy masks (record pairs for record-level
    variables, block pairs for block-level ones).
    """
    if f1.p != schema.p or f2.p != schema.p:
        raise SchemaError(f"block arity mismatch: files have {f1.p}/{f2.p}, schema has {schema.p}")
    if f1.k != schema.k or f2.k != schema.k:
        raise SchemaError(f"record arity mismatch: files have {f1.k}/{f2.k}, schema has {schema.k}")
    known = {s.name for s in schema.block} | {s.name for s in schema.record}
    for name in force_agreement:
        if name not in known:
            raise SchemaError(f"force-agreement variable {name!r} not in schema")

    forced = set(force_agreement)
    block_specs = list(schema.block)
    record_specs = list(schema.record)
    model_block = [i for i, sp in enumerate(block_specs) if sp.name not in forced]
    model_record = [i for i, sp in enumerate(record_specs) if sp.name not in forced]
    S, T = f1.n_blocks, f2.n_blocks
    n1, n2 = f1.block_sizes, f2.block_sizes
    missing: dict[str, int] = {sp.name: 0 for sp in block_specs + record_specs}

    # Block-level variables: one value per block.
    books = [dict() for _ in block_specs]
    bv1 = [
        _PreparedVariable(sp, [bv[p] for bv in f1.block_values], books[p])
        for p, sp in enumerate(block_specs)
    ]
    bv2 = [
        _PreparedVariable(sp, [bv[p] for bv in f2.block_values], books[p])
        for p, sp in enumerate(block_specs)
    ]
    block_levels = np.zeros((S, T, len(model_block)), dtype=np.uint8)
    block_mask = None
    for out_p, p in enumerate(model_block):
        lev, miss = _pair_levels(bv1[p], bv2[p])
        block_levels[:, :, out_p] = lev
        missing[block_specs[p].name] += miss
    for p, sp in enumerate(block_specs):
        if sp.name in forced:
            lev, miss = _pair_levels(bv1[p], bv2[p])
            missing[sp.name] += miss
            ok = lev == sp.level_count - 1
            block_mask = ok if block_mask is None else (block_mask & ok)

    # Record-level variables, prepared once per (file, block).
    rbooks = [dict() for _ in record_specs]
    rv1 = [
        [
            _PreparedVariable(sp, [rv[k] for rv in f1.record_values[s]], rbooks[k])
            for k, sp in enumerate(record_specs)
        ]
        for s in range(S)
    ]
    rv2 = [
        [
            _PreparedVariable(sp, [rv[k] for rv in f2.record_values[t]], rbooks[k])
            for k, sp in enumerate(record_specs)
        ]
        for t in range(T)
    ]

    level_counts = [record_specs[k].level_count for k in model_record]
    code_span = 1
    for lc in level_counts:
        code_span *= lc
    if code_span > 2**62:
        raise SchemaError(
            "record comparison space too large to pack into 64-bit pattern codes; "
            "reduce the number of multi-level record variables"
        )
    raw_chunks, shapes, masks = [], [], []
    any_mask = False
    for s in range(S):
        mrow = []
        for t in range(T):
            codes = np.zeros((int(n1[s]), int(n2[t])), dtype=np.int64)
            for out_k, k in enumerate(model_record):
                lev, miss = _pair_levels(rv1[s][k], rv2[t][k])
                missing[record_specs[k].name] += miss
                codes = codes * level_counts[out_k] + lev
            pmask = None
            for k, sp in enumerate(record_specs):
                if sp.name in forced:
                    lev, miss = _pair_levels(rv1[s][k], rv2[t][k])
                    missing[sp.name] += miss
                    ok = lev == sp.level_count - 1
                    pmask = ok if pmask is None else (pmask & ok)
            mrow.append(pmask)
            if pmask is not None:
                any_mask = True
            raw_chunks.append(codes.ravel())
            shapes.append(codes.shape)
        masks.append(mrow)

    flat = np.concatenate(raw_chunks) if raw_chunks else np.zeros(0, dtype=np.int64)
    pattern_codes = np.unique(flat)
    if pattern_codes.size == 0:
        pattern_codes = np.zeros(1, dtype=np.int64)
    patterns_nested = _densify(flat, shapes, pattern_codes)
    patterns = [patterns_nested[s * T : (s + 1) * T] for s in range(S)]

    # Decode packed codes back into per-variable levels.
    G = pattern_codes.size
    pattern_levels = np.zeros((G, len(model_record)), dtype=np.uint8)
    rem = pattern_codes.copy()
    for out_k in range(len(model_record) - 1, -1, -1):
        pattern_levels[:, out_k] = rem % level_counts[out_k]
        rem //= level_counts[out_k]

    pair_hist = np.zeros((S, T, G), dtype=np.int64)
    for s in range(S):
        for t in range(T):
            ids = patterns[s][t]
            pmask = masks[s][t]
            vals = ids[pmask] if pmask is not None else ids.ravel()
            pair_hist[s, t] = np.bincount(vals, minlength=G)

    return ComparisonCube(
        schema=ComparisonSchema(
            block=[block_specs[p] for p in model_block],
            record=[record_specs[k] for k in model_record],
        ),
        n1=n1,
        n2=n2,
        block_levels=block_levels,
        pattern_levels=pattern_levels,
        patterns=patterns,
        pair_hist=pair_hist,
        masks=masks if any_mask else None,
        block_mask=block_mask,
        missing_comparisons=missing,
        f1_ids=(tuple(f1.block_ids), tuple(tuple(r) for r in f1.record_ids)),
        f2_ids=(tuple(f2.block_ids), tuple(tuple(r) for r in f2.record_ids)),
    )


def read_blocked_csv(path, schema: ComparisonSchema, file_id: str | None = None) -> BlockedFile:
    """Read a blocked file: record-id, block-id, P block columns, K record columns.

    Block-level columns must be constant within a block id; violations are
    schema errors. Blocks and records keep first-appearance order.
    """
    p, k = schema.p, schema.k
    expected = 2 + p + k
    block_order: list[str] = []
    blocks: dict[str, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file")
        if len(header) != expected:
            raise SchemaError(f"{path}: expected {expected} columns, found {len(header)}")
        for row in reader:
            if not row:
                continue
            if len(row) != expected:
                raise SchemaError(f"{path}: bad row width {len(row)}")
            rid, bid = row[0], row[1]
            bvals = tuple(row[2 : 2 + p])
            rvals = tuple(row[2 + p :])
            if bid not in blocks:
                block_order.append(bid)
                blocks[bid] = {"bvals": bvals, "rids": [], "rvals": []}
            elif blocks[bid]["bvals"] != bvals:
                raise SchemaError(f"{path}: block {bid!r} has non-constant block-level values")
            blocks[bid]["rids"].append(rid)
            blocks[bid]["rvals"].append(rvals)
    if not block_order:
        raise SchemaError(f"{path}: no records")
    return BlockedFile(
        file_id=file_id or str(path),
        block_ids=block_order,
        block_values=[blocks[b]["bvals"] for b in block_order],
        record_ids=[blocks[b]["rids"] for b in block_order],
        record_values=[blocks[b]["rvals"] for b in block_order],
    )


def write_blocked_csv(f: BlockedFile, schema: ComparisonSchema, path) -> None:
    header = ["record_id", "block_id"]
    header += [sp.name for sp in schema.block]
    header += [sp.name for sp in schema.record]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s, bid in enumerate(f.block_ids):
            bvals = [_fmt(v) for v in f.block_values[s]]
            for rid, rvals in zip(f.record_ids[s], f.record_values[s]):
                writer.writerow([rid, bid] + bvals + [_fmt(v) for v in rvals])


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(float(v))
    return "" if v is None else str(v)
