"""Descriptor, forward pass and hand-written reverse-mode gradients.

The energy of every atom is a function of edge lengths only, so forces and the
virial come out of a single scalar per edge, ``dE/dr_e``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse

from ..core import SimBox, minimum_image
from ..errors import ModelError, ReceptiveFieldError
from ..neighbors import pairs_within, to_full
from .model import EMBED_FIT, MESSAGE_PASSING, NnModel


# -- radial functions ---------------------------------------------------------

def switch(r, rc):
    """Smooth cutoff: 1 below 0.9 rc, cosine ramp to 0 at rc, 0 beyond."""
    r = np.asarray(r)
    r_on = 0.9 * rc
    x = np.clip((r - r_on) / (rc - r_on), 0.0, 1.0)
    s = 0.5 * (np.cos(np.pi * x) + 1.0)
    ds = np.where((r > r_on) & (r <= rc), -0.5 * np.pi / (rc - r_on) * np.sin(np.pi * x), 0.0)
    s = np.where(r > rc, 0.0, s)
    return s, ds


def radial_basis(r, centers, width):
    """Gaussian basis ``exp(-((r - mu_k)/width)^2)`` and its r-derivative, shape (E, K)."""
    d = (np.asarray(r)[:, None] - centers[None, :]) / width
    g = np.exp(-d * d)
    return g, -2.0 * d / width * g


# -- graph --------------------------------------------------------------------

class _Segments:
    """Deterministic segment sums keyed by an integer index.

    Implemented as a CSR product whose rows list the edges of each segment in
    stable order, so every sum is accumulated in the same sequence on every
    call. ``np.add.reduceat`` gives the same result but is several times
    slower on (edges, features) arrays.
    """

    def __init__(self, index, n):
        self.n = n
        index = np.asarray(index, dtype=np.int64)
        order = np.argsort(index, kind="stable")
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(index, minlength=n), out=indptr[1:])
        self._parts = (order, indptr, len(index))
        self._matrices = {}

    def _matrix(self, dtype):
        m = self._matrices.get(dtype)
        if m is None:
            order, indptr, n_edges = self._parts
            m = sparse.csr_matrix((np.ones(n_edges, dtype=dtype), order, indptr),
                                  shape=(self.n, n_edges))
            self._matrices[dtype] = m
        return m

    def sum(self, values):
        values = np.asarray(values)
        if values.shape[0] == 0:
            return np.zeros((self.n,) + values.shape[1:], dtype=values.dtype)
        return np.asarray(self._matrix(values.dtype) @ values)


@dataclass
class Graph:
    n: int
    src: np.ndarray  # centre atom i of edge e
    dst: np.ndarray  # neighbour atom j of edge e
    vec: np.ndarray  # r_j - r_i (minimum image on periodic axes)
    r: np.ndarray

    def __post_init__(self):
        self.by_src = _Segments(self.src, self.n)
        self.by_dst = _Segments(self.dst, self.n)

    @property
    def n_edges(self) -> int:
        return len(self.src)


def full_neighbor_pairs(positions, box: SimBox, rc: float) -> np.ndarray:
    return to_full(pairs_within(positions, box, rc))


def build_graph(positions, box: SimBox, rc: float, edges=None, dtype=np.float64) -> Graph:
    pos = np.asarray(positions, dtype=dtype)
    if edges is None:
        edges = full_neighbor_pairs(positions, box, rc)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    vec = minimum_image(pos[edges[:, 1]] - pos[edges[:, 0]], box).astype(dtype, copy=False)
    r = np.sqrt(np.einsum("ij,ij->i", vec, vec))
    keep = r <= rc
    edges, vec, r = edges[keep], vec[keep], r[keep]
    return Graph(len(pos), edges[:, 0], edges[:, 1], vec, r)


# -- inputs and outputs -------------------------------------------------------

@dataclass
class NnInput:
    """Atoms handed to the model.

    ``owned`` flags atoms whose energies count; the rest are ghosts that only
    provide environment. ``halo_width`` is the depth of ghost coverage around
    owned atoms (``None`` when the input is a complete periodic system).
    """

    positions: np.ndarray
    types: np.ndarray
    box: SimBox
    owned: Optional[np.ndarray] = None
    edges: Optional[np.ndarray] = None
    halo_width: Optional[float] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.types = np.asarray(self.types, dtype=np.int64)
        if self.owned is None:
            self.owned = np.ones(len(self.positions), dtype=bool)
        self.owned = np.asarray(self.owned, dtype=bool)

    @property
    def n_atoms(self) -> int:
        return len(self.positions)


@dataclass
class NnOutput:
    energies: np.ndarray  # per atom; ghost entries are zero
    forces: np.ndarray  # for every input atom, ghosts included
    virial: float = 0.0
    flops: int = 0
    activation_bytes: int = 0
    n_edges: int = 0
    param_grads: Optional[dict] = None

    @property
    def energy(self) -> float:
        return float(np.sum(self.energies))


@dataclass
class _Counter:
    itemsize: int
    flops: int = 0
    bytes: int = 0

    def dense(self, rows, n_in, n_out):
        # forward GEMM + bias + tanh, backward GEMM + activation derivative
        self.flops += rows * (4 * n_in * n_out + 4 * n_out)

    def keep(self, *arrays):
        self.bytes += sum(int(np.prod(a.shape)) for a in arrays) * self.itemsize


# -- MLPs -----------------------------------------------------------------------

def _n_layers(params, prefix):
    k = 0
    while f"{prefix}.W{k}" in params:
        k += 1
    return k


def mlp_forward(params, prefix, x, final_tanh, counter=None, dtype=np.float64):
    cache = []
    h = x
    n = _n_layers(params, prefix)
    for k in range(n):
        W = params[f"{prefix}.W{k}"].astype(dtype, copy=False)
        b = params[f"{prefix}.b{k}"].astype(dtype, copy=False)
        z = h @ W + b
        act = k < n - 1 or final_tanh
        a = np.tanh(z) if act else z
        cache.append((h, a, act))
        if counter is not None:
            counter.dense(len(h), W.shape[0], W.shape[1])
            counter.keep(a)
        h = a
    return h, cache


def mlp_backward(params, prefix, cache, g, grads=None, dtype=np.float64):
    for k in reversed(range(len(cache))):
        h_in, a, act = cache[k]
        if act:
            g = g * (1.0 - a * a)
        if grads is not None:
            grads[f"{prefix}.W{k}"] += h_in.T @ g
            grads[f"{prefix}.b{k}"] += g.sum(axis=0)
        g = g @ params[f"{prefix}.W{k}"].astype(dtype, copy=False).T
    return g


# -- descriptor -------------------------------------------------------------------

def _edge_radial(graph, model, dtype):
    centers = model.centers.astype(dtype)
    g, dg = radial_basis(graph.r, centers, dtype(model.width))
    s, ds = switch(graph.r, dtype(model.rc_model))
    return g.astype(dtype), dg.astype(dtype), s.astype(dtype), ds.astype(dtype)


def _descriptor_from_graph(graph, types, model, g, s):
    n_types, k = model.n_types, model.n_basis
    phi = g * s[:, None]
    slot = graph.src * n_types + types[graph.dst]
    seg = _Segments(slot, graph.n * n_types)
    return seg.sum(phi).reshape(graph.n, n_types * k), phi


def descriptor(positions, types, neighbors, model: NnModel, box: SimBox | None = None
               ) -> np.ndarray:
    """Per-atom radial features, shape ``(n, n_types * n_basis)``.

    Column block ``t`` of row ``i`` is sum over neighbours j of type t of
    g_k(r_ij) s(r_ij). ``neighbors`` is a full pair list (or ``None`` to
    build one at ``rc_model``).
    """
    positions = np.asarray(positions, dtype=float)
    if box is None:
        box = _open_box(positions, model.rc_model)
    graph = build_graph(positions, box, model.rc_model, neighbors)
    g, _, s, _ = _edge_radial(graph, model, np.float64)
    feats, _ = _descriptor_from_graph(graph, np.asarray(types), model, g, s)
    return feats


def _open_box(positions, pad):
    extent = np.ptp(positions, axis=0) + 4.0 * pad + 1.0 if len(positions) else np.ones(3)
    return SimBox(tuple(extent), (False, False, False))


# -- the model ----------------------------------------------------------------------

@dataclass
class _Forward:
    """Activations kept from a forward pass for the reverse sweep."""

    model: NnModel
    inp: NnInput
    dtype: type
    graph: Graph
    radial: tuple
    caches: tuple
    e_atom: np.ndarray
    counter: _Counter


def _check_input(model: NnModel, inp: NnInput, check_receptive_field: bool) -> None:
    if model.params.get("emb.W0") is None or model.params["emb.W0"].shape[0] != model.feature_dim:
        raise ModelError("embedding weights do not match the descriptor dimension "
                         f"{model.feature_dim}")
    if inp.n_atoms and (inp.types.min() < 0 or inp.types.max() >= model.n_types):
        raise ModelError(f"atom types outside [0, {model.n_types})")
    if (check_receptive_field and inp.halo_width is not None
            and inp.halo_width < model.receptive_field - 1e-12):
        raise ReceptiveFieldError(
            f"halo of {inp.halo_width:.3f} nm is narrower than the receptive field "
            f"{model.depth} x {model.rc_model:.3f} = {model.receptive_field:.3f} nm")


def forward(model: NnModel, inp: NnInput, dtype=np.float64,
            check_receptive_field: bool = True) -> _Forward:
    dtype = np.dtype(dtype).type
    _check_input(model, inp, check_receptive_field)
    counter = _Counter(np.dtype(dtype).itemsize)
    params = model.params
    n, K, H = inp.n_atoms, model.n_basis, model.hidden
    graph = build_graph(inp.positions, inp.box, model.rc_model, inp.edges, dtype)
    E = graph.n_edges
    g, dg, s, ds = _edge_radial(graph, model, dtype)
    feats, _ = _descriptor_from_graph(graph, inp.types, model, g, s)
    counter.flops += E * K * 12 + E * 10
    counter.keep(graph.vec, graph.r, g, dg, s, ds, feats)
    x = feats * dtype(model.feature_scale)

    h, emb_cache = mlp_forward(params, "emb", x, True, counter, dtype)
    blocks = []
    for layer in range(1, model.depth):
        xe = np.concatenate([h[graph.dst], g], axis=1)
        m, msg_cache = mlp_forward(params, f"msg{layer}", xe, False, counter, dtype)
        M = graph.by_src.sum(s[:, None] * m)
        u = np.concatenate([h, M], axis=1)
        dh, upd_cache = mlp_forward(params, f"upd{layer}", u, False, counter, dtype)
        counter.keep(xe, M, u)
        counter.flops += 2 * E * H * 3 + n * H * 2
        blocks.append((msg_cache, upd_cache, m))
        h = h + dh
    out, fit_cache = mlp_forward(params, "fit", h, False, counter, dtype)
    return _Forward(model, inp, dtype, graph, (g, dg, s, ds), (emb_cache, blocks, fit_cache),
                    out[:, 0], counter)


def backward(fw: _Forward, weights: np.ndarray, param_grads: bool = False):
    """Gradients of ``sum_i weights_i E_i``.

    Returns ``(forces, virial, grads)`` where forces are the negative position
    gradient for every input atom and ``grads`` maps parameter names to
    arrays (or is ``None``).
    """
    model, dtype, graph = fw.model, fw.dtype, fw.graph
    params = model.params
    g, dg, s, ds = fw.radial
    emb_cache, blocks, fit_cache = fw.caches
    n, K, H = fw.inp.n_atoms, model.n_basis, model.hidden
    grads = None
    if param_grads:
        grads = {name: np.zeros(v.shape, dtype=dtype) for name, v in params.items()}
    g_h = mlp_backward(params, "fit", fit_cache, np.asarray(weights, dtype)[:, None], grads, dtype)
    g_r = np.zeros(graph.n_edges, dtype=dtype)
    for layer in range(model.depth - 1, 0, -1):
        msg_cache, upd_cache, m = blocks[layer - 1]
        g_u = mlp_backward(params, f"upd{layer}", upd_cache, g_h, grads, dtype)
        g_prev = g_h + g_u[:, :H]
        g_Me = g_u[:, H:][graph.src]
        g_r += np.einsum("ij,ij->i", g_Me, m) * ds
        g_xe = mlp_backward(params, f"msg{layer}", msg_cache, s[:, None] * g_Me, grads, dtype)
        g_prev = g_prev + graph.by_dst.sum(g_xe[:, :H])
        g_r += np.einsum("ij,ij->i", g_xe[:, H:], dg)
        g_h = g_prev
    g_x = mlp_backward(params, "emb", emb_cache, g_h, grads, dtype)
    g_feats = (g_x * dtype(model.feature_scale)).reshape(n, model.n_types, K)
    g_phi = g_feats[graph.src, fw.inp.types[graph.dst]]
    g_r += np.einsum("ij,ij->i", g_phi, dg * s[:, None] + g * ds[:, None])

    # dE/dr_j = g_r u_e and dE/dr_i = -g_r u_e; forces are the negatives
    f_edge = (g_r / np.where(graph.r > 0, graph.r, 1.0))[:, None] * graph.vec
    forces = np.zeros((n, 3), dtype=np.float64)
    for axis in range(3):
        forces[:, axis] += np.bincount(graph.src, weights=f_edge[:, axis], minlength=n)
        forces[:, axis] -= np.bincount(graph.dst, weights=f_edge[:, axis], minlength=n)
    virial = -float(np.sum(g_r * graph.r, dtype=np.float64))
    if grads is not None:
        grads = {k: v.astype(np.float64) for k, v in grads.items()}
    return forces, virial, grads


def evaluate(model: NnModel, inp: NnInput, dtype=np.float64, param_grads: bool = False,
             check_receptive_field: bool = True) -> NnOutput:
    """Per-atom energies, forces on all input atoms, virial and cost counters."""
    fw = forward(model, inp, dtype, check_receptive_field)
    forces, virial, grads = backward(fw, inp.owned, param_grads)
    energies = np.where(inp.owned, fw.e_atom, 0.0).astype(np.float64)
    return NnOutput(energies, forces, virial, int(fw.counter.flops), int(fw.counter.bytes),
                    fw.graph.n_edges, grads)


def embed_fit_energy(inp: NnInput, model: NnModel, dtype=np.float64, **kwargs) -> NnOutput:
    """Embedding + fitting-net potential (receptive field = rc_model)."""
    if model.family != EMBED_FIT:
        raise ModelError(f"expected an embed_fit model, got {model.family}")
    return evaluate(model, inp, dtype, **kwargs)


def message_passing_energy(inp: NnInput, model: NnModel, dtype=np.float64, **kwargs) -> NnOutput:
    """Residual message-passing potential (receptive field = depth * rc_model)."""
    if model.family != MESSAGE_PASSING:
        raise ModelError(f"expected a message_passing model, got {model.family}")
    return evaluate(model, inp, dtype, **kwargs)


def infer(inp: NnInput, model: NnModel, dtype=np.float64, **kwargs) -> NnOutput:
    """Dispatch on the model family."""
    if model.family == EMBED_FIT:
        return embed_fit_energy(inp, model, dtype, **kwargs)
    return message_passing_energy(inp, model, dtype, **kwargs)
