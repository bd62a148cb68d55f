"""Empirical conditional-discrepancy estimator, its gradients, and diagnostics.

The estimator compares two conditional embeddings built from batches
(z_s, y_s) and (z_t, y_t).  With K the data-side Grams, L the label-side
Grams and Kt = K + lam*I:

    total = Tr(K_s Kt_s^-1 L_s Kt_s^-1) + Tr(K_t Kt_t^-1 L_t Kt_t^-1)
            - 2 Tr(K_ts Kt_s^-1 L_st Kt_t^-1)

where K_ts is (t-rows x s-cols) and L_st is (s-rows x t-cols).  This is the
convention that reproduces the explicit-operator Frobenius norm computed by
``cmmd_oracle`` (the equivalence is pinned by tests); the variant with the
transposed cross label Gram does not.

Gradients are a purpose-built reverse pass over this fixed expression, not a
general autodiff tape: closed-form adjoints for trace-of-product, the SPD
solve (d(X^-1) = -X^-1 dX X^-1), and the kernel Grams.
"""

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BackwardWithoutForwardError, ShapeError
from .kernels import KernelSpec, gram, gram_backward
from .linalg import as_matrix, spd_factor, trace_of_product


@dataclass(frozen=True)
class CmmdValue:
    term_s: float
    term_t: float
    cross_term: float
    total: float


class Wrt(enum.Enum):
    LATENT_S = "latent_s"
    LATENT_T = "latent_t"
    PREDICTED_LABELS = "predicted_labels"


@dataclass
class Retained:
    """Leaf inputs kept alive for the backward pass."""

    data_spec: KernelSpec
    label_spec: KernelSpec
    z_s: np.ndarray
    y_s: np.ndarray
    z_t: np.ndarray
    y_t: np.ndarray


@dataclass
class GramPack:
    k_s: np.ndarray
    k_t: np.ndarray
    k_ts: np.ndarray
    l_s: np.ndarray
    l_t: np.ndarray
    l_st: np.ndarray
    lam: float
    retained: Optional[Retained] = None

    def validate(self):
        k_s = as_matrix(self.k_s, "k_s")
        k_t = as_matrix(self.k_t, "k_t")
        n_s, n_t = k_s.shape[0], k_t.shape[0]
        for name, m, shape in (
            ("k_s", k_s, (n_s, n_s)),
            ("k_t", k_t, (n_t, n_t)),
            ("k_ts", as_matrix(self.k_ts, "k_ts"), (n_t, n_s)),
            ("l_s", as_matrix(self.l_s, "l_s"), (n_s, n_s)),
            ("l_t", as_matrix(self.l_t, "l_t"), (n_t, n_t)),
            ("l_st", as_matrix(self.l_st, "l_st"), (n_s, n_t)),
        ):
            if m.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {m.shape}")
            if shape[0] == shape[1] and name in ("k_s", "k_t", "l_s", "l_t"):
                asym = np.max(np.abs(m - m.T))
                if asym > 1e-10:
                    raise ShapeError(f"{name}: asymmetry {asym:.3e} exceeds 1e-10")
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")


def build_gram_pack(
    data_spec: KernelSpec,
    label_spec: KernelSpec,
    z_s,
    y_s,
    z_t,
    y_t,
    lam: float,
    retain: bool = False,
) -> GramPack:
    """Assemble the six Gram matrices from latent codes and label vectors."""
    z_s = as_matrix(z_s, "z_s")
    y_s = as_matrix(y_s, "y_s")
    z_t = as_matrix(z_t, "z_t")
    y_t = as_matrix(y_t, "y_t")
    if z_s.shape[0] != y_s.shape[0] or z_t.shape[0] != y_t.shape[0]:
        raise ShapeError(
            f"sample/label row counts differ: z_s {z_s.shape} y_s {y_s.shape}, "
            f"z_t {z_t.shape} y_t {y_t.shape}"
        )
    pack = GramPack(
        k_s=gram(data_spec, z_s, z_s),
        k_t=gram(data_spec, z_t, z_t),
        k_ts=gram(data_spec, z_t, z_s),
        l_s=gram(label_spec, y_s, y_s),
        l_t=gram(label_spec, y_t, y_t),
        l_st=gram(label_spec, y_s, y_t),
        lam=float(lam),
        retained=Retained(data_spec, label_spec, z_s, y_s, z_t, y_t) if retain else None,
    )
    pack.validate()
    return pack


def _regularized(k, lam):
    kt = k.copy()
    kt[np.diag_indices_from(kt)] += lam
    return kt


def cmmd_value(pack: GramPack) -> CmmdValue:
    """Evaluate the trace formula; inverses go through the SPD solve."""
    pack.validate()
    s = spd_factor(_regularized(pack.k_s, pack.lam))
    t = spd_factor(_regularized(pack.k_t, pack.lam))

    m_s = s.solve_from_right(s.solve(pack.l_s))   # Kt_s^-1 L_s Kt_s^-1
    term_s = trace_of_product(pack.k_s, m_s)

    m_t = t.solve_from_right(t.solve(pack.l_t))
    term_t = trace_of_product(pack.k_t, m_t)

    q = t.solve_from_right(s.solve(pack.l_st))    # Kt_s^-1 L_st Kt_t^-1
    cross = trace_of_product(pack.k_ts, q)

    return CmmdValue(
        term_s=term_s,
        term_t=term_t,
        cross_term=cross,
        total=term_s + term_t - 2.0 * cross,
    )


def cmmd_oracle(phi_s, psi_s, phi_t, psi_t, lam: float) -> float:
    """Squared Frobenius distance between explicit conditional-embedding operators.

    Inputs are finite-dimensional feature matrices with one sample per ROW.
    Each operator is formed densely as psi^T (phi phi^T + lam I)^-1 phi using a
    plain inverse, independent of the factorized path the trace formula uses.
    """
    phi_s = as_matrix(phi_s, "phi_s")
    psi_s = as_matrix(psi_s, "psi_s")
    phi_t = as_matrix(phi_t, "phi_t")
    psi_t = as_matrix(psi_t, "psi_t")
    if phi_s.shape[0] != psi_s.shape[0] or phi_t.shape[0] != psi_t.shape[0]:
        raise ShapeError("sample counts differ between phi and psi")
    if phi_s.shape[1] != phi_t.shape[1] or psi_s.shape[1] != psi_t.shape[1]:
        raise ShapeError("feature widths differ between the s and t sides")

    def operator(phi, psi):
        n = phi.shape[0]
        k = phi @ phi.T
        return psi.T @ np.linalg.inv(k + lam * np.eye(n)) @ phi

    diff = operator(phi_s, psi_s) - operator(phi_t, psi_t)
    return float(np.sum(diff * diff))


def h_matrix(k, lam: float) -> np.ndarray:
    """(K + lam I)^-1 K (K + lam I)^-1, the weight applied to the label Gram."""
    k = as_matrix(k, "k")
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    f = spd_factor(_regularized(k, lam))
    h = f.solve(f.solve(k).T)
    return (h + h.T) / 2.0


def _gram_adjoints(pack: GramPack, upstream: float):
    """d(total)/d(each Gram matrix), holding the other Grams fixed.

    With S = Kt_s^-1, T = Kt_t^-1, K_st = k_ts^T, L_ts = l_st^T:
      d/dK_s  = A_s - B_s - B_s^T + 2 S K_st T L_ts S,  A_s = S L_s S, B_s = S K_s A_s
      d/dK_t  = A_t - B_t - B_t^T + 2 T L_ts S K_st T
      d/dK_ts = -2 T L_ts S
      d/dL_t  = T K_t T
      d/dL_st = -2 S K_st T
    The K_s/K_t corrections come from differentiating through the inverse
    (d(X^-1) = -X^-1 dX X^-1); cross-term adjoints are kept unsymmetrized
    because every Gram entry is an independent forward node.
    """
    u = float(upstream)
    s = spd_factor(_regularized(pack.k_s, pack.lam))
    t = spd_factor(_regularized(pack.k_t, pack.lam))

    a_s = s.solve_from_right(s.solve(pack.l_s))   # S L_s S
    s_ks = s.solve(pack.k_s)                      # S K_s
    b_s = s_ks @ a_s                              # S K_s S L_s S
    a_t = t.solve_from_right(t.solve(pack.l_t))   # T L_t T
    t_kt = t.solve(pack.k_t)                      # T K_t
    b_t = t_kt @ a_t

    s_kst = s.solve(np.ascontiguousarray(pack.k_ts.T))  # S K_st   (n_s x n_t)
    t_lts = t.solve(np.ascontiguousarray(pack.l_st.T))  # T L_ts   (n_t x n_s)
    t_lts_s = s.solve_from_right(t_lts)                 # T L_ts S (n_t x n_s)
    s_kst_t = t.solve_from_right(s_kst)                 # S K_st T (n_s x n_t)

    return {
        "k_s": u * (a_s - b_s - b_s.T + 2.0 * s_kst @ t_lts_s),
        "k_t": u * (a_t - b_t - b_t.T + 2.0 * t.solve_from_right(t_lts @ s_kst)),
        "k_ts": -2.0 * u * t_lts_s,
        "l_t": u * t.solve_from_right(t_kt),
        "l_st": -2.0 * u * s_kst_t,
    }


def cmmd_gradients(pack: GramPack, upstream: float = 1.0):
    """Gradients of upstream * total w.r.t. z_s, z_t and the predicted labels y_t.

    y_s is the true-label side and is treated as constant.  Requires the pack
    to have been built with retain=True.
    """
    r = pack.retained
    if r is None:
        raise BackwardWithoutForwardError(
            "cmmd gradients need retained inputs; build the pack with retain=True"
        )
    adj = _gram_adjoints(pack, upstream)

    da, db = gram_backward(r.data_spec, r.z_s, r.z_s, adj["k_s"])
    d_z_s = da + db
    da, db = gram_backward(r.data_spec, r.z_t, r.z_t, adj["k_t"])
    d_z_t = da + db
    da, db = gram_backward(r.data_spec, r.z_t, r.z_s, adj["k_ts"])
    d_z_t += da
    d_z_s += db

    da, db = gram_backward(r.label_spec, r.y_t, r.y_t, adj["l_t"])
    d_y_t = da + db
    da, db = gram_backward(r.label_spec, r.y_s, r.y_t, adj["l_st"])
    d_y_t += db

    return d_z_s, d_z_t, d_y_t


def cmmd_backward(pack: GramPack, upstream: float, wrt: Wrt) -> np.ndarray:
    """Gradient of upstream * total with respect to one leaf."""
    d_z_s, d_z_t, d_y_t = cmmd_gradients(pack, upstream)
    if wrt is Wrt.LATENT_S:
        return d_z_s
    if wrt is Wrt.LATENT_T:
        return d_z_t
    if wrt is Wrt.PREDICTED_LABELS:
        return d_y_t
    raise ValueError(f"unknown leaf {wrt!r}")
