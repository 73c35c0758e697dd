"""Recorded scalar autodiff with nested derivatives.

A Tape is an append-only record of scalar operations. DiffScalar handles
wrap record entries; Python arithmetic on them appends nodes eagerly.
Derivatives come from walking the record backward. The walk can either
write new nodes into the record (so the derivative is itself a recorded,
differentiable quantity, which is what lets second time-derivatives stay
trainable) or produce plain numbers for optimizer consumption.

Node values are float64 scalars or 1-d float64 arrays. An array value
means the node carries one independent scalar per collocation point,
evaluated in lockstep; every operation is elementwise in that case and
``Tape.mean`` collapses a lockstep batch to a true scalar. This is not a
tensor engine: there is no broadcasting semantics beyond scalar-vs-batch
and no linear algebra between recorded values other than the n-ary
linear combination node used by network layers.

Replaying a record after overwriting leaf or parameter values recomputes
every stored value with the same floating-point operations in the same
order, so replays are bit-reproducible.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Value = "float | np.ndarray"

# Node opcodes. LEAF values are set externally, CONST values are frozen,
# PARAM values are read from a named parameter vector on each replay.
_LEAF = 0
_CONST = 1
_PARAM = 2
_ADD = 3
_SUB = 4
_MUL = 5
_DIV = 6
_NEG = 7
_EXP = 8
_SQRT = 9
_RELU = 10
_STEP = 11
_SIN = 12
_COS = 13
_DETACH = 14
_MEAN = 15
_BSUM = 16
_LINCOMB = 17
_SIGMOID = 18

_OP_NAMES = {
    _LEAF: "leaf", _CONST: "const", _PARAM: "param", _ADD: "add",
    _SUB: "sub", _MUL: "mul", _DIV: "div", _NEG: "neg", _EXP: "exp",
    _SQRT: "sqrt", _RELU: "relu", _STEP: "step", _SIN: "sin", _COS: "cos",
    _DETACH: "detach", _MEAN: "mean", _BSUM: "bsum", _LINCOMB: "lincomb",
    _SIGMOID: "sigmoid",
}

# Ops whose adjoint does not propagate to operands. The step function is
# the recorded derivative of relu; its own derivative is zero everywhere
# (the kink at 0 is assigned derivative 0).
_NON_DIFFERENTIABLE = (_DETACH, _STEP)


class EvaluationError(RuntimeError):
    """A primitive hit an invalid input (division by zero, sqrt of a negative)."""


class RecordError(RuntimeError):
    """The record was used inconsistently (mixed tapes, bad batch shapes)."""


def _is_batch(v):
    return isinstance(v, np.ndarray)


class DiffScalar:
    """Handle to one entry of a Tape. Behaves like a real number."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self):
        return self.tape._vals[self.index]

    def __repr__(self):
        return f"DiffScalar({self.value!r} @ node {self.index})"

    def _coerce(self, other) -> "DiffScalar":
        if isinstance(other, DiffScalar):
            if other.tape is not self.tape:
                raise RecordError("operands belong to different tapes")
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        return self.tape._binary(_ADD, self, self._coerce(other))

    def __radd__(self, other):
        return self.tape._binary(_ADD, self._coerce(other), self)

    def __sub__(self, other):
        return self.tape._binary(_SUB, self, self._coerce(other))

    def __rsub__(self, other):
        return self.tape._binary(_SUB, self._coerce(other), self)

    def __mul__(self, other):
        return self.tape._binary(_MUL, self, self._coerce(other))

    def __rmul__(self, other):
        return self.tape._binary(_MUL, self._coerce(other), self)

    def __truediv__(self, other):
        return self.tape._binary(_DIV, self, self._coerce(other))

    def __rtruediv__(self, other):
        return self.tape._binary(_DIV, self._coerce(other), self)

    def __neg__(self):
        return self.tape._unary(_NEG, self)

    def __pow__(self, n):
        if not isinstance(n, int) or n < 0:
            raise RecordError("only non-negative integer powers are recorded")
        if n == 0:
            return self.tape.constant(1.0)
        out = self
        for _ in range(n - 1):
            out = out * self
        return out


class Tape:
    """Append-only computation record over scalar (or lockstep-batched) values."""

    def __init__(self):
        self._ops: list[int] = []
        self._args: list[tuple] = []
        self._vals: list = []
        self._groups: dict[str, np.ndarray] = {}
        self._param_cache: dict[tuple[str, int], int] = {}
        self._const_cache: dict[float, int] = {}
        self._blocks = None  # lazy replay/backward plan over lincomb runs
        self._mask_cache: dict = {}

    # ------------------------------------------------------------------
    # construction

    def __len__(self):
        return len(self._ops)

    def _push(self, op: int, args: tuple, value) -> DiffScalar:
        self._ops.append(op)
        self._args.append(args)
        self._vals.append(value)
        if self._blocks is not None:
            self._blocks = None
        if self._mask_cache:
            self._mask_cache = {}
        return DiffScalar(self, len(self._ops) - 1)

    def scalar(self, value: float) -> DiffScalar:
        """New input leaf holding one real value."""
        return self._push(_LEAF, (), float(value))

    def batch(self, values) -> DiffScalar:
        """New input leaf holding a lockstep batch of independent reals."""
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1:
            raise RecordError("batched leaves must be 1-d")
        return self._push(_LEAF, (), arr.copy())

    def constant(self, value: float) -> DiffScalar:
        v = float(value)
        cached = self._const_cache.get(v)
        if cached is not None:
            return DiffScalar(self, cached)
        node = self._push(_CONST, (), v)
        self._const_cache[v] = node.index
        return node

    def batch_constant(self, values) -> DiffScalar:
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1:
            raise RecordError("batched constants must be 1-d")
        return self._push(_CONST, (), arr.copy())

    def register_params(self, name: str, values: np.ndarray) -> None:
        """Attach a named parameter vector. The array is kept by reference:
        in-place updates are picked up on the next replay."""
        if values.dtype != np.float64 or values.ndim != 1:
            raise RecordError("parameter vectors must be 1-d float64")
        existing = self._groups.get(name)
        if existing is not None and existing is not values:
            raise RecordError(f"parameter group {name!r} already registered")
        self._groups[name] = values

    def param(self, name: str, offset: int) -> DiffScalar:
        """Leaf bound to entry `offset` of a registered parameter vector.
        Repeated requests return the same node."""
        key = (name, offset)
        cached = self._param_cache.get(key)
        if cached is not None:
            return DiffScalar(self, cached)
        node = self._push(_PARAM, (name, offset), float(self._groups[name][offset]))
        self._param_cache[key] = node.index
        return node

    def set_value(self, leaf: DiffScalar, value) -> None:
        """Overwrite an input leaf before a replay. Batch length must not change."""
        if self._ops[leaf.index] != _LEAF:
            raise RecordError("only leaves can be overwritten")
        old = self._vals[leaf.index]
        if _is_batch(old):
            arr = np.asarray(value, dtype=np.float64)
            if arr.shape != old.shape:
                raise RecordError("batch shape changed on leaf overwrite")
            self._vals[leaf.index] = arr.copy()
        else:
            self._vals[leaf.index] = float(value)

    # ------------------------------------------------------------------
    # primitive evaluation (shared by eager construction and replay)

    def _check_pair(self, a, b):
        va, vb = self._vals[a], self._vals[b]
        if _is_batch(va) and _is_batch(vb) and va.shape != vb.shape:
            raise RecordError("lockstep batches of different lengths combined")

    def _eval(self, i: int):
        op = self._ops[i]
        args = self._args[i]
        vals = self._vals
        if op == _ADD:
            return vals[args[0]] + vals[args[1]]
        if op == _SUB:
            return vals[args[0]] - vals[args[1]]
        if op == _MUL:
            return vals[args[0]] * vals[args[1]]
        if op == _DIV:
            d = vals[args[1]]
            if np.any(d == 0.0):
                raise EvaluationError(f"node {i} (div): division by zero")
            return vals[args[0]] / d
        if op == _NEG:
            return -vals[args[0]]
        if op == _EXP:
            return np.exp(vals[args[0]])
        if op == _SQRT:
            v = vals[args[0]]
            if np.any(v < 0.0):
                raise EvaluationError(f"node {i} (sqrt): negative operand")
            return np.sqrt(v)
        if op == _RELU:
            return np.maximum(vals[args[0]], 0.0)
        if op == _STEP:
            v = vals[args[0]]
            if _is_batch(v):
                return (v > 0.0).astype(np.float64)
            return 1.0 if v > 0.0 else 0.0
        if op == _SIN:
            return np.sin(vals[args[0]])
        if op == _COS:
            return np.cos(vals[args[0]])
        if op == _SIGMOID:
            with np.errstate(over="ignore"):
                return 1.0 / (1.0 + np.exp(-vals[args[0]]))
        if op == _DETACH:
            return vals[args[0]]
        if op == _MEAN:
            return float(np.mean(vals[args[0]]))
        if op == _BSUM:
            v = vals[args[0]]
            return float(np.sum(v)) if _is_batch(v) else v
        if op == _LINCOMB:
            coeffs, xs = args
            return self._lincomb_value(
                [vals[c] for c in coeffs], [vals[x] for x in xs]
            )
        if op == _PARAM:
            name, offset = args
            return float(self._groups[name][offset])
        raise RecordError(f"node {i}: op {op} cannot be re-evaluated")

    @staticmethod
    def _lincomb_value(cvals, xvals):
        batched_c = [_is_batch(c) for c in cvals]
        batched_x = [_is_batch(x) for x in xvals]
        if not any(batched_c) and all(batched_x):
            shapes = {x.shape for x in xvals}
            if len(shapes) == 1:
                return np.asarray(cvals, dtype=np.float64) @ np.stack(xvals)
        if not any(batched_c) and not any(batched_x):
            return float(
                np.asarray(cvals, dtype=np.float64) @ np.asarray(xvals, dtype=np.float64)
            )
        acc = cvals[0] * xvals[0]
        for c, x in zip(cvals[1:], xvals[1:]):
            acc = acc + c * x
        return acc

    def _binary(self, op, a: DiffScalar, b: DiffScalar) -> DiffScalar:
        self._check_pair(a.index, b.index)
        node = self._push(op, (a.index, b.index), None)
        self._vals[node.index] = self._eval(node.index)
        return node

    def _unary(self, op, a: DiffScalar) -> DiffScalar:
        node = self._push(op, (a.index,), None)
        self._vals[node.index] = self._eval(node.index)
        return node

    # public primitives beyond operator syntax -------------------------

    def lincomb(self, pairs: Sequence[tuple[DiffScalar, DiffScalar]]) -> DiffScalar:
        """Sum of coefficient*operand pairs as a single record entry."""
        if not pairs:
            return self.constant(0.0)
        coeffs = tuple(p[0].index for p in pairs)
        xs = tuple(p[1].index for p in pairs)
        node = self._push(_LINCOMB, (coeffs, xs), None)
        self._vals[node.index] = self._eval(node.index)
        return node

    def mean(self, x: DiffScalar) -> DiffScalar:
        """Mean over the lockstep batch (count fixed at record time)."""
        v = x.value
        n = int(v.shape[0]) if _is_batch(v) else 1
        node = self._push(_MEAN, (x.index, n), None)
        node_i = node.index
        self._vals[node_i] = float(np.mean(v))
        return node

    def detach(self, x: DiffScalar) -> DiffScalar:
        """Value pass-through that blocks derivative flow."""
        return self._unary(_DETACH, x)

    # ------------------------------------------------------------------
    # replay

    def _compile_blocks(self):
        """Group lincomb nodes that share one operand tuple and draw all
        coefficients from one parameter group, contiguous or not. Every
        operand of a group predates its first member, so the whole group
        can be evaluated there; all consumers of a member come after it,
        so adjoints are final once the walk reaches the lowest member."""
        grouped: dict = {}
        ops = self._ops
        for i in range(len(ops)):
            if ops[i] != _LINCOMB:
                continue
            coeffs, xs = self._args[i]
            group = self._coeff_group(coeffs)
            if group is None:
                continue
            shapes = {_is_batch(self._vals[x]) for x in xs}
            if len(shapes) != 1:
                continue
            key = (xs, group)
            grouped.setdefault(key, []).append(i)
        blocks = []
        member_map = {}
        for (xs, group), members in grouped.items():
            offsets = np.array(
                [[self._args[c][1] for c in self._args[m][0]] for m in members],
                dtype=np.intp,
            )
            blocks.append({"members": members, "xs": xs, "group": group,
                           "offsets": offsets})
            for m in members:
                member_map[m] = len(blocks) - 1
        self._blocks = (blocks, member_map)

    def _coeff_group(self, coeffs):
        group = None
        for c in coeffs:
            if self._ops[c] != _PARAM:
                return None
            name = self._args[c][0]
            if group is None:
                group = name
            elif group != name:
                return None
        return group

    def replay(self) -> None:
        """Recompute every non-leaf value in record order."""
        if self._blocks is None:
            self._compile_blocks()
        blocks, member_map = self._blocks
        ops = self._ops
        vals = self._vals
        n = len(ops)
        i = 0
        while i < n:
            op = ops[i]
            if op == _LEAF or op == _CONST:
                i += 1
                continue
            bidx = member_map.get(i)
            if bidx is not None:
                blk = blocks[bidx]
                if i == blk["members"][0]:
                    # Row-by-row vec @ stack matches the computation done when
                    # the nodes were first recorded, keeping replays
                    # bit-identical; later members are skipped when reached.
                    C = self._groups[blk["group"]][blk["offsets"]]
                    xvals = [vals[x] for x in blk["xs"]]
                    if _is_batch(xvals[0]):
                        width = xvals[0].shape[0]
                        X = np.empty((len(xvals), width))
                        for r, x in enumerate(xvals):
                            X[r] = x
                        for r, k in enumerate(blk["members"]):
                            vals[k] = C[r] @ X
                    else:
                        xvec = np.asarray(xvals, dtype=np.float64)
                        for r, k in enumerate(blk["members"]):
                            vals[k] = float(C[r] @ xvec)
                i += 1
                continue
            vals[i] = self._eval(i)
            i += 1

    # ------------------------------------------------------------------
    # backward walks

    def _dependents_mask(self, roots: Sequence[int]) -> np.ndarray:
        """mask[i] is True when node i depends on at least one root."""
        mask = np.zeros(len(self._ops), dtype=bool)
        for r in roots:
            mask[r] = True
        ops, args = self._ops, self._args
        for i in range(len(ops)):
            if mask[i]:
                continue
            op = ops[i]
            if op in (_LEAF, _CONST, _PARAM) or op in _NON_DIFFERENTIABLE:
                continue
            if op == _LINCOMB:
                coeffs, xs = args[i]
                if any(mask[c] for c in coeffs) or any(mask[x] for x in xs):
                    mask[i] = True
            elif op == _MEAN:
                mask[i] = mask[args[i][0]]
            else:
                if any(mask[a] for a in args[i]):
                    mask[i] = True
        return mask

    def _ancestors_mask(self, output: int) -> np.ndarray:
        """mask[i] is True when `output` depends on node i."""
        mask = np.zeros(len(self._ops), dtype=bool)
        mask[output] = True
        ops, args = self._ops, self._args
        for i in range(output, -1, -1):
            if not mask[i]:
                continue
            op = ops[i]
            if op in (_LEAF, _CONST, _PARAM) or op in _NON_DIFFERENTIABLE:
                continue
            if op == _LINCOMB:
                coeffs, xs = args[i]
                for c in coeffs:
                    mask[c] = True
                for x in xs:
                    mask[x] = True
            elif op == _MEAN:
                mask[args[i][0]] = True
            else:
                for a in args[i]:
                    mask[a] = True
        return mask

    # -- recorded backward: gradients become new record entries --------

    def grad(self, output: DiffScalar, wrt: Sequence[DiffScalar]) -> list[DiffScalar]:
        """Derivatives of `output` with respect to each node in `wrt`,
        written into the record so they can be differentiated again.

        Reading the derivative at a node treats that node as an
        independent input; paths that merely produce its value are not
        followed further.
        """
        roots = [w.index for w in wrt]
        active = self._dependents_mask(roots) & self._ancestors_mask(output.index)
        active[output.index] = True
        pending: dict[int, list] = {output.index: [(None, None)]}  # literal seed 1
        ops, args = self._ops, self._args
        adjoint: dict[int, int] = {}
        root_set = set(roots)
        for i in range(output.index, -1, -1):
            if i not in pending or not active[i]:
                continue
            adj = self._materialize(pending.pop(i))
            adjoint[i] = adj
            op = ops[i]
            if op in (_LEAF, _CONST, _PARAM) or op in _NON_DIFFERENTIABLE:
                continue
            if i in root_set:
                # treat the root as independent: do not chain into its
                # defining expression
                continue
            a = args[i]
            if op == _ADD:
                self._accum(pending, active, a[0], None, adj)
                self._accum(pending, active, a[1], None, adj)
            elif op == _SUB:
                self._accum(pending, active, a[0], None, adj)
                self._accum(pending, active, a[1], None, self._negate(adj))
            elif op == _MUL:
                self._accum(pending, active, a[0], a[1], adj)
                self._accum(pending, active, a[1], a[0], adj)
            elif op == _DIV:
                num, den = a
                inv = self._node_recip(den)
                self._accum(pending, active, num, inv, adj)
                # d/dden (num/den) = -value/den
                ratio = self._push_mul(i, inv)
                self._accum(pending, active, den, ratio, self._negate(adj))
            elif op == _NEG:
                self._accum(pending, active, a[0], None, self._negate(adj))
            elif op == _EXP:
                self._accum(pending, active, a[0], i, adj)
            elif op == _SQRT:
                half = self.constant(0.5).index
                halfed = self._push_mul(half, self._node_recip(i))
                self._accum(pending, active, a[0], halfed, adj)
            elif op == _RELU:
                gate = self._push(_STEP, (a[0],), self._eval_new(_STEP, (a[0],))).index
                self._accum(pending, active, a[0], gate, adj)
            elif op == _SIN:
                cosn = self._push(_COS, (a[0],), self._eval_new(_COS, (a[0],))).index
                self._accum(pending, active, a[0], cosn, adj)
            elif op == _COS:
                sinn = self._push(_SIN, (a[0],), self._eval_new(_SIN, (a[0],))).index
                self._accum(pending, active, a[0], sinn, self._negate(adj))
            elif op == _SIGMOID:
                one = self.constant(1.0).index
                complement = self._push(_SUB, (one, i), None)
                self._vals[complement.index] = self._eval(complement.index)
                slope = self._push_mul(i, complement.index)
                self._accum(pending, active, a[0], slope, adj)
            elif op == _MEAN:
                x, n = a
                inv_n = self.constant(1.0 / n).index
                self._accum(pending, active, x, inv_n, adj)
            elif op == _BSUM:
                self._accum(pending, active, a[0], None, adj)
            elif op == _LINCOMB:
                coeffs, xs = a
                for c, x in zip(coeffs, xs):
                    if active[x]:
                        self._accum(pending, active, x, c, adj)
                    if active[c]:
                        self._accum(pending, active, c, x, adj)
            else:  # pragma: no cover
                raise RecordError(f"node {i}: cannot differentiate op {op}")
        out = []
        for r in roots:
            idx = adjoint.get(r)
            out.append(DiffScalar(self, idx) if idx is not None else self.constant(0.0))
        return out

    def _eval_new(self, op, args):
        self._ops.append(op)
        self._args.append(args)
        self._vals.append(None)
        try:
            v = self._eval(len(self._ops) - 1)
        finally:
            self._ops.pop()
            self._args.pop()
            self._vals.pop()
        return v

    def _negate(self, adj):
        if adj is None:
            return ("neg", None)
        if isinstance(adj, tuple):
            return adj if adj[0] != "neg" else None if adj[1] is None else adj[1]
        return ("neg", adj)

    def _materialize(self, contributions) -> int:
        """Collapse pending (coeff, adjoint) contributions into one node index.

        coeff None means 1; adjoint None means the literal seed 1; an
        adjoint of ("neg", x) means -x with x possibly None.
        """
        terms = []
        for coeff, adj in contributions:
            neg = False
            if isinstance(adj, tuple):
                neg = True
                adj = adj[1]
            terms.append((coeff, adj, neg))
        if len(terms) == 1:
            coeff, adj, neg = terms[0]
            node = self._term_node(coeff, adj)
            return self._push(_NEG, (node,), self._eval_new(_NEG, (node,))).index if neg else node
        pairs = []
        one = None
        for coeff, adj, neg in terms:
            node = self._term_node(coeff, adj) if (coeff is None or adj is None) else None
            if node is not None:
                if one is None:
                    one = self.constant(1.0).index
                c, x = one, node
            else:
                c, x = coeff, adj
            if neg:
                x = self._push(_NEG, (x,), self._eval_new(_NEG, (x,))).index
            pairs.append((c, x))
        coeffs = tuple(p[0] for p in pairs)
        xs = tuple(p[1] for p in pairs)
        node = self._push(_LINCOMB, (coeffs, xs), None)
        self._vals[node.index] = self._eval(node.index)
        return node.index

    def _term_node(self, coeff, adj) -> int:
        if coeff is None and adj is None:
            return self.constant(1.0).index
        if coeff is None:
            return adj
        if adj is None:
            return coeff
        return self._push_mul(coeff, adj)

    def _push_mul(self, a: int, b: int) -> int:
        one = self._const_cache.get(1.0)
        if one is not None:
            if a == one:
                return b
            if b == one:
                return a
        node = self._push(_MUL, (a, b), None)
        self._vals[node.index] = self._eval(node.index)
        return node.index

    def _node_recip(self, den: int) -> int:
        one = self.constant(1.0).index
        node = self._push(_DIV, (one, den), None)
        self._vals[node.index] = self._eval(node.index)
        return node.index

    def _accum(self, pending, active, target, coeff, adj):
        if not active[target]:
            return
        pending.setdefault(target, []).append((coeff, adj))

    # -- raw backward: plain numbers, no new nodes ---------------------

    def backward_values(
        self,
        output: DiffScalar,
        wrt: Sequence[DiffScalar] = (),
        param_groups: Sequence[str] = (),
    ):
        """Adjoints of `output` as plain numbers.

        Returns (list aligned with `wrt`, dict of per-group gradient
        vectors). Scalar-valued nodes reached through lockstep-batched
        paths receive the batch-summed adjoint, so parameter gradients of
        a batched mean come out already reduced.
        """
        if self._blocks is None:
            self._compile_blocks()
        blocks, member_map = self._blocks
        target_list = [w.index for w in wrt]
        targets = set(target_list)
        grads = {g: np.zeros(len(self._groups[g])) for g in param_groups}
        roots = list(target_list)
        for g in param_groups:
            roots.extend(
                idx for (name, _), idx in self._param_cache.items() if name == g
            )
        if not roots:
            return [0.0 for _ in target_list], grads
        cache_key = (output.index, tuple(target_list), tuple(param_groups))
        useful = self._mask_cache.get(cache_key)
        if useful is None:
            useful = self._dependents_mask(roots)
            self._mask_cache[cache_key] = useful
        ops, args, vals = self._ops, self._args, self._vals
        adj: dict[int, object] = {output.index: 1.0}

        def accumulate(node, contribution):
            if _is_batch(contribution) and not _is_batch(vals[node]):
                contribution = float(contribution.sum())
            cur = adj.get(node)
            adj[node] = contribution if cur is None else cur + contribution

        i = output.index
        while i >= 0:
            bidx = member_map.get(i)
            if bidx is not None:
                blk = blocks[bidx]
                if i != blk["members"][0]:
                    # adjoints of higher members keep accumulating until the
                    # walk reaches the lowest member, where all are final
                    i -= 1
                    continue
                if any(k in adj and useful[k] for k in blk["members"]):
                    self._block_backward(blk, adj, useful, grads, accumulate, targets)
                for k in blk["members"]:
                    if k not in targets:
                        adj.pop(k, None)
                i -= 1
                continue
            a_out = adj.pop(i, None)
            if a_out is None or not useful[i]:
                i -= 1
                continue
            op = ops[i]
            a = args[i]
            if op in (_LEAF, _CONST) or op in _NON_DIFFERENTIABLE:
                pass
            elif op == _PARAM:
                name, offset = a
                if name in grads:
                    g = a_out
                    grads[name][offset] += float(g.sum()) if _is_batch(g) else g
                if i in targets:
                    adj[i] = a_out  # keep for collection below
            elif op == _ADD:
                if useful[a[0]]:
                    accumulate(a[0], a_out)
                if useful[a[1]]:
                    accumulate(a[1], a_out)
            elif op == _SUB:
                if useful[a[0]]:
                    accumulate(a[0], a_out)
                if useful[a[1]]:
                    accumulate(a[1], -a_out)
            elif op == _MUL:
                if useful[a[0]]:
                    accumulate(a[0], a_out * vals[a[1]])
                if useful[a[1]]:
                    accumulate(a[1], a_out * vals[a[0]])
            elif op == _DIV:
                num, den = a
                if useful[num]:
                    accumulate(num, a_out / vals[den])
                if useful[den]:
                    accumulate(den, -a_out * vals[i] / vals[den])
            elif op == _NEG:
                if useful[a[0]]:
                    accumulate(a[0], -a_out)
            elif op == _EXP:
                if useful[a[0]]:
                    accumulate(a[0], a_out * vals[i])
            elif op == _SQRT:
                if useful[a[0]]:
                    accumulate(a[0], a_out * 0.5 / vals[i])
            elif op == _RELU:
                if useful[a[0]]:
                    v = vals[a[0]]
                    gate = (v > 0.0).astype(np.float64) if _is_batch(v) else (1.0 if v > 0.0 else 0.0)
                    accumulate(a[0], a_out * gate)
            elif op == _SIN:
                if useful[a[0]]:
                    accumulate(a[0], a_out * np.cos(vals[a[0]]))
            elif op == _COS:
                if useful[a[0]]:
                    accumulate(a[0], -a_out * np.sin(vals[a[0]]))
            elif op == _SIGMOID:
                if useful[a[0]]:
                    s = vals[i]
                    accumulate(a[0], a_out * (s * (1.0 - s)))
            elif op == _MEAN:
                x, n = a
                if useful[x]:
                    accumulate(x, a_out / n)
            elif op == _BSUM:
                if useful[a[0]]:
                    accumulate(a[0], a_out)
            elif op == _LINCOMB:
                coeffs, xs = a
                for c, x in zip(coeffs, xs):
                    if useful[x]:
                        accumulate(x, a_out * vals[c])
                    if useful[c]:
                        accumulate(c, a_out * vals[x])
            if i in targets and op != _PARAM:
                adj[i] = a_out
            i -= 1
        out = []
        for t in target_list:
            g = adj.get(t, 0.0)
            out.append(g)
        return out, grads

    def _block_backward(self, blk, adj, useful, grads, accumulate, targets):
        rows = blk["members"]
        xvals = [self._vals[x] for x in blk["xs"]]
        batched = any(_is_batch(x) for x in xvals)
        m = len(rows)
        if batched:
            width = next(x.shape[0] for x in xvals if _is_batch(x))
            A = np.zeros((m, width))
        else:
            A = np.zeros(m)
        for r, k in enumerate(rows):
            v = adj.get(k)
            if v is not None:
                A[r] = v
        C = self._groups[blk["group"]][blk["offsets"]]
        # operand adjoints
        Xbar = C.T @ A
        for r, x in enumerate(blk["xs"]):
            if useful[x]:
                accumulate(x, Xbar[r])
        # coefficient adjoints go straight into the gradient buffer
        want_group = blk["group"] in grads
        want_nodes = targets and any(
            self._param_cache.get((blk["group"], off)) in targets
            for off in blk["offsets"].ravel()
        )
        if want_group or want_nodes:
            if batched:
                X = np.empty((len(xvals), A.shape[1]))
                for r, x in enumerate(xvals):
                    X[r] = x
                Cbar = A @ X.T
            else:
                Cbar = np.outer(A, np.asarray(xvals, dtype=np.float64))
            if want_group:
                np.add.at(grads[blk["group"]], blk["offsets"].ravel(), Cbar.ravel())
            if want_nodes:
                for (r, c), off in np.ndenumerate(blk["offsets"]):
                    node = self._param_cache.get((blk["group"], off))
                    if node in targets:
                        accumulate(node, Cbar[r, c])


# ----------------------------------------------------------------------
# elementary functions usable on DiffScalar or plain numbers

def exp(x):
    if isinstance(x, DiffScalar):
        return x.tape._unary(_EXP, x)
    return np.exp(x)


def sqrt(x):
    if isinstance(x, DiffScalar):
        return x.tape._unary(_SQRT, x)
    return np.sqrt(x)


def relu(x):
    """max(0, x); derivative at exactly 0 is defined as 0."""
    if isinstance(x, DiffScalar):
        return x.tape._unary(_RELU, x)
    return np.maximum(x, 0.0)


def sin(x):
    if isinstance(x, DiffScalar):
        return x.tape._unary(_SIN, x)
    return np.sin(x)


def cos(x):
    if isinstance(x, DiffScalar):
        return x.tape._unary(_COS, x)
    return np.cos(x)


def sigmoid(x):
    """1/(1+exp(-x)); recorded as one primitive with slope s(1-s)."""
    if isinstance(x, DiffScalar):
        return x.tape._unary(_SIGMOID, x)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def detach(x):
    if isinstance(x, DiffScalar):
        return x.tape.detach(x)
    return x


# ----------------------------------------------------------------------
# functional front ends

def grad_inputs(f: Callable, x: Sequence[float]) -> list[float]:
    """First derivatives of ``f(*leaves)`` with respect to every input."""
    tape = Tape()
    leaves = [tape.scalar(v) for v in x]
    y = f(*leaves)
    vals, _ = tape.backward_values(y, wrt=leaves)
    return [float(v) for v in vals]


def second_derivative(f: Callable, x: Sequence[float], i: int, j: int) -> float:
    """d2 f / dx_i dx_j, built by differentiating a recorded first derivative."""
    tape = Tape()
    leaves = [tape.scalar(v) for v in x]
    y = f(*leaves)
    gi = tape.grad(y, [leaves[i]])[0]
    vals, _ = tape.backward_values(gi, wrt=[leaves[j]])
    return float(vals[0])


def param_grad(loss: DiffScalar, group: str) -> np.ndarray:
    """Gradient of a recorded loss with respect to a bound parameter vector.
    Entries the loss never touched are exactly zero."""
    _, grads = loss.tape.backward_values(loss, param_groups=[group])
    return grads[group]


def fd_check(f: Callable, x: Sequence[float], step: float) -> float:
    """Max relative discrepancy of recorded first and second derivatives
    against central finite differences at ``x``."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = [float(v) for v in x]
    n = len(x)

    def feval(pt):
        tape = Tape()
        leaves = [tape.scalar(v) for v in pt]
        return float(f(*leaves).value)

    worst = 0.0
    g = grad_inputs(f, x)
    for i in range(n):
        hi = list(x)
        lo = list(x)
        hi[i] += step
        lo[i] -= step
        fd = (feval(hi) - feval(lo)) / (2.0 * step)
        worst = max(worst, abs(g[i] - fd) / max(abs(g[i]), abs(fd), 1.0))
    for i in range(n):
        for j in range(n):
            ad = second_derivative(f, x, i, j)
            if i == j:
                hi = list(x)
                lo = list(x)
                hi[i] += step
                lo[i] -= step
                fd = (feval(hi) - 2.0 * feval(x) + feval(lo)) / (step * step)
            else:
                pp = list(x); pm = list(x); mp = list(x); mm = list(x)
                pp[i] += step; pp[j] += step
                pm[i] += step; pm[j] -= step
                mp[i] -= step; mp[j] += step
                mm[i] -= step; mm[j] -= step
                fd = (feval(pp) - feval(pm) - feval(mp) + feval(mm)) / (4.0 * step * step)
            worst = max(worst, abs(ad - fd) / max(abs(ad), abs(fd), 1.0))
    return worst
