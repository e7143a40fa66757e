"""Hamiltonian families along closed loops: analytic two-level models and
molecular active-space Hamiltonians assembled from per-geometry integral bundles.

Bundle files are UTF-8 JSON (optionally gzipped) with keys n_orb, e_nuc_core,
h (N x N nested rows), g (flat length N^4, index p*N^3+q*N^2+r*N+s, chemists'
order), optional S (N x N), geometry (name -> number), t. Loop manifests carry
kind, n_points, points, active_space; unknown keys are tolerated.
"""

from __future__ import annotations

import gzip
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import statevec as sv
from .orbital import lowdin_inverse_sqrt

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]])
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]])

BUILTIN_LOOPS = ("qubit-ci", "qubit-trivial")


class BundleFormatError(ValueError):
    """Bundle file violates the schema or an integral symmetry."""


class LoopGridError(ValueError):
    """Requested t does not lie on the loop's declared grid."""


@dataclass(frozen=True)
class ActiveSpaceSpec:
    """Orbital partition: core doubly occupied, active correlated, virtual empty."""

    n_core: int
    n_active: int
    n_virtual: int
    n_active_electrons: int

    def __post_init__(self):
        if min(self.n_core, self.n_active, self.n_virtual) < 0:
            raise ValueError("orbital counts must be non-negative")
        if not (0 <= self.n_active_electrons <= 2 * self.n_active):
            raise ValueError("active electron count outside [0, 2*n_active]")

    @property
    def n_orb(self) -> int:
        return self.n_core + self.n_active + self.n_virtual

    @property
    def core(self) -> range:
        return range(self.n_core)

    @property
    def active(self) -> range:
        return range(self.n_core, self.n_core + self.n_active)

    @property
    def virtual(self) -> range:
        return range(self.n_core + self.n_active, self.n_orb)

    def to_dict(self) -> dict:
        return {
            "n_core": self.n_core,
            "n_active": self.n_active,
            "n_virtual": self.n_virtual,
            "n_active_electrons": self.n_active_electrons,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActiveSpaceSpec":
        return cls(int(d["n_core"]), int(d["n_active"]), int(d["n_virtual"]),
                   int(d["n_active_electrons"]))


# ---------------------------------------------------------------------------
# Analytic families


@dataclass
class EffectiveCIParams:
    """Two-level cone model around the degeneracy point r_cross in the (x, z) plane."""

    hx: float
    hz: float
    r_cross: np.ndarray
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.hx == 0.0 or self.hz == 0.0:
            raise ValueError("cone slopes must be nonzero")
        if self.radius <= 0.0:
            raise ValueError("loop radius must be positive")
        self.r_cross = np.asarray(self.r_cross, dtype=float).reshape(2)
        self.center = np.asarray(self.center, dtype=float).reshape(2)


def effective_ci_hamiltonian(p: EffectiveCIParams, R) -> np.ndarray:
    """hx*(R - R_cross)_x sigma_x + hz*(R - R_cross)_z sigma_z."""
    d = np.asarray(R, dtype=float).reshape(2) - p.r_cross
    return p.hx * d[0] * SIGMA_X + p.hz * d[1] * SIGMA_Z


def qubit_family_hamiltonian(name: str, t: float) -> np.ndarray:
    """Built-in single-qubit loops with analytically forced Berry phases."""
    phi = 2.0 * math.pi * t
    if name == "qubit-ci":
        return math.cos(phi) * SIGMA_Z + math.sin(phi) * SIGMA_X
    if name == "qubit-trivial":
        return (2.0 + math.cos(phi)) * SIGMA_Z + math.sin(phi) * SIGMA_X
    raise ValueError(f"unknown builtin family '{name}' (have {BUILTIN_LOOPS})")


# ---------------------------------------------------------------------------
# Integral bundles


@dataclass
class IntegralBundle:
    """Per-geometry electronic integrals defining H(R(t))."""

    n_orb: int
    e_nuc_core: float
    h: np.ndarray
    g: np.ndarray
    S: np.ndarray | None = None
    geometry: dict = field(default_factory=dict)
    t: float = 0.0
    extra: dict = field(default_factory=dict)
    _oao_cache: tuple | None = field(default=None, repr=False, compare=False)

    def validate(self, tol: float = 1e-8):
        n = self.n_orb
        if self.h.shape != (n, n):
            raise BundleFormatError(f"h has shape {self.h.shape}, expected ({n}, {n})")
        if self.g.shape != (n, n, n, n):
            raise BundleFormatError(f"g has shape {self.g.shape}, expected ({n},)*4")
        if np.max(np.abs(self.h - self.h.T)) > tol:
            raise BundleFormatError("one-electron symmetry violated (h != h^T)")
        g = self.g
        for perm, name in (
            ((1, 0, 2, 3), "(pq|rs)=(qp|rs)"),
            ((0, 1, 3, 2), "(pq|rs)=(pq|sr)"),
            ((2, 3, 0, 1), "(pq|rs)=(rs|pq)"),
        ):
            if np.max(np.abs(g - g.transpose(perm))) > tol:
                raise BundleFormatError(f"two-electron symmetry violated: {name}")
        if self.S is not None:
            if self.S.shape != (n, n):
                raise BundleFormatError(f"S has shape {self.S.shape}, expected ({n}, {n})")
            if np.max(np.abs(self.S - self.S.T)) > tol:
                raise BundleFormatError("overlap matrix is not symmetric")
            if np.linalg.eigvalsh(self.S).min() <= 1e-10:
                raise BundleFormatError("overlap matrix is not positive definite")

    def overlap_or_identity(self) -> np.ndarray:
        return np.eye(self.n_orb) if self.S is None else self.S

    def oao_integrals(self) -> tuple:
        """(h, g) in the symmetrically orthogonalized AO basis; cached."""
        if self._oao_cache is None:
            if self.S is None or np.allclose(self.S, np.eye(self.n_orb), atol=1e-14):
                self._oao_cache = (self.h, self.g)
            else:
                x = lowdin_inverse_sqrt(self.S)
                self._oao_cache = (x.T @ self.h @ x, transform_two_electron(self.g, x))
        return self._oao_cache

    def to_dict(self) -> dict:
        d = {
            "n_orb": self.n_orb,
            "e_nuc_core": float(self.e_nuc_core),
            "h": self.h.tolist(),
            "g": self.g.reshape(-1).tolist(),
            "geometry": {k: float(v) for k, v in self.geometry.items()},
            "t": float(self.t),
        }
        if self.S is not None:
            d["S"] = self.S.tolist()
        d.update(self.extra)
        return d

    def save(self, path) -> None:
        path = Path(path)
        payload = json.dumps(self.to_dict())
        if path.suffix == ".gz":
            with gzip.open(path, "wt", encoding="utf-8") as fh:
                fh.write(payload)
        else:
            path.write_text(payload, encoding="utf-8")


def load_bundle(path) -> IntegralBundle:
    """Load and validate a bundle file; raises BundleFormatError naming the failed check."""
    path = Path(path)
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rt", encoding="utf-8") as fh:
                raw = json.load(fh)
        else:
            raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BundleFormatError(f"cannot read bundle {path}: {exc}") from exc
    for key in ("n_orb", "e_nuc_core", "h", "g"):
        if key not in raw:
            raise BundleFormatError(f"bundle {path} is missing key '{key}'")
    n = int(raw["n_orb"])
    h = np.asarray(raw["h"], dtype=float)
    g_flat = np.asarray(raw["g"], dtype=float)
    if g_flat.size != n**4:
        raise BundleFormatError(f"g has {g_flat.size} entries, expected n_orb^4 = {n**4}")
    bundle = IntegralBundle(
        n_orb=n,
        e_nuc_core=float(raw["e_nuc_core"]),
        h=h,
        g=g_flat.reshape(n, n, n, n),
        S=np.asarray(raw["S"], dtype=float) if "S" in raw else None,
        geometry=dict(raw.get("geometry", {})),
        t=float(raw.get("t", 0.0)),
        extra={k: raw[k] for k in raw
               if k not in ("n_orb", "e_nuc_core", "h", "g", "S", "geometry", "t")},
    )
    bundle.validate()
    return bundle


def transform_two_electron(g: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Four-index transform g'_{pqrs} = sum g_{abcd} c_ap c_bq c_cr c_ds."""
    out = np.tensordot(g, c, axes=([0], [0]))      # q r s p
    out = np.tensordot(out, c, axes=([0], [0]))    # r s p q
    out = np.tensordot(out, c, axes=([0], [0]))    # s p q r
    out = np.tensordot(out, c, axes=([0], [0]))    # p q r s
    return out


def mo_integrals(bundle: IntegralBundle, C: np.ndarray) -> tuple:
    """Full-space MO integrals for orthogonal C over the Lowdin OAO basis."""
    h_oao, g_oao = bundle.oao_integrals()
    return C.T @ h_oao @ C, transform_two_electron(g_oao, C)


# ---------------------------------------------------------------------------
# Active-space Hamiltonian


@dataclass
class ActiveHamiltonian:
    """Core-embedded active-space Hamiltonian; `dense` is the JW operator without e_const."""

    e_const: float
    h_eff: np.ndarray
    g_act: np.ndarray
    n_active: int
    _dense: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def dense(self) -> np.ndarray:
        if self._dense is None:
            if self.n_active > 6:
                raise ValueError("dense assembly limited to 6 active orbitals (12 qubits)")
            na = self.n_active
            estack = sv._excitation_stack(na)          # (na, na, dim, dim)
            dim = estack.shape[-1]
            one = self.h_eff - 0.5 * np.einsum("pqqs->ps", self.g_act)
            ham = np.tensordot(one, estack, axes=([0, 1], [0, 1]))
            t = np.tensordot(self.g_act.reshape(na * na, na * na),
                             estack.reshape(na * na, dim, dim), axes=([1], [0]))
            e_flat = estack.reshape(na * na, dim, dim)
            for k in range(na * na):
                ham += 0.5 * e_flat[k] @ t[k]
            self._dense = 0.5 * (ham + ham.T)  # symmetrize away roundoff
        return self._dense


def core_folding(h_mo: np.ndarray, g_mo: np.ndarray, active: ActiveSpaceSpec) -> tuple:
    """Closed-shell folding of doubly occupied core orbitals.

    Returns (e_core, h_eff) with h_eff over active indices only:
    h_eff_pq = h_pq + sum_i [2 (pq|ii) - (pi|iq)],
    e_core = sum_i 2 h_ii + sum_ij [2 (ii|jj) - (ij|ji)].
    """
    core = list(active.core)
    act = list(active.active)
    h_act = h_mo[np.ix_(act, act)].copy()
    e_core = 0.0
    if core:
        g_ppii = g_mo[np.ix_(act, act, core, core)]
        g_piiq = g_mo[np.ix_(act, core, core, act)]
        h_act += 2.0 * np.einsum("pqii->pq", g_ppii)
        h_act -= np.einsum("piiq->pq", g_piiq)
        e_core += 2.0 * h_mo[core, core].sum()
        g_cc = g_mo[np.ix_(core, core, core, core)]
        e_core += 2.0 * np.einsum("iijj->", g_cc) - np.einsum("ijji->", g_cc)
    return e_core, h_act


def build_active_hamiltonian(bundle: IntegralBundle, C: np.ndarray,
                             active: ActiveSpaceSpec) -> ActiveHamiltonian:
    """Transform bundle integrals to the MO basis of C and fold out the core."""
    if active.n_orb != bundle.n_orb:
        raise ValueError(f"active space covers {active.n_orb} orbitals, bundle has {bundle.n_orb}")
    if np.max(np.abs(C.T @ C - np.eye(bundle.n_orb))) > 1e-8:
        raise ValueError("MO coefficient matrix is not orthogonal")
    h_mo, g_mo = mo_integrals(bundle, C)
    e_core, h_eff = core_folding(h_mo, g_mo, active)
    act = list(active.active)
    g_act = g_mo[np.ix_(act, act, act, act)].copy()
    return ActiveHamiltonian(
        e_const=bundle.e_nuc_core + e_core,
        h_eff=h_eff,
        g_act=g_act,
        n_active=active.n_active,
    )


def energy_from_rdms(ham: ActiveHamiltonian, rdms: sv.RDMPair) -> float:
    """e_const + sum h_eff*gamma + (1/2) sum g*Gamma."""
    if rdms.gamma.shape[0] != ham.n_active:
        raise ValueError("RDM dimension does not match the active space")
    return float(
        ham.e_const
        + np.einsum("pq,pq->", ham.h_eff, rdms.gamma)
        + 0.5 * np.einsum("pqrs,pqrs->", ham.g_act, rdms.Gamma)
    )


# ---------------------------------------------------------------------------
# Loops


@dataclass
class LoopSpec:
    """Closed Hamiltonian loop sampled on a uniform t grid (t=1 repeats t=0)."""

    kind: str                      # analytic-qubit | effective-ci | bundle-list | dense-list
    n_points: int                  # grid points including the closure point at t=1
    family: str | None = None
    params: EffectiveCIParams | None = None
    bundle_paths: list | None = None
    active_space: ActiveSpaceSpec | None = None
    initial_c_oao: np.ndarray | None = None
    matrices: list | None = None   # dense-list kind: in-memory real symmetric family
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_steps(self) -> int:
        return self.n_points - 1

    def grid(self) -> np.ndarray:
        return np.arange(self.n_points) / self.n_steps

    def grid_index(self, t: float) -> int:
        k = t * self.n_steps
        ki = int(round(k))
        if abs(k - ki) > 1e-9 or not (0 <= ki <= self.n_steps):
            raise LoopGridError(
                f"t={t} is off the declared {self.n_points}-point grid; interpolation is unsupported")
        return ki

    def supports_steps(self, n: int) -> bool:
        """A run with n steps needs its grid {k/n} to be a subset of the declared grid."""
        return n >= 1 and self.n_steps % n == 0

    def point(self, t: float):
        """Hamiltonian source at grid value t: dense 2x2 for analytic kinds, bundle otherwise."""
        k = self.grid_index(t)
        tk = k / self.n_steps
        if self.kind == "analytic-qubit":
            return qubit_family_hamiltonian(self.family, tk)
        if self.kind == "effective-ci":
            phi = 2.0 * math.pi * tk
            r = self.params.center + self.params.radius * np.array([math.cos(phi), math.sin(phi)])
            return effective_ci_hamiltonian(self.params, r)
        if self.kind == "bundle-list":
            path = self.bundle_paths[k]
            if path not in self._cache:
                self._cache[path] = load_bundle(path)
            return self._cache[path]
        if self.kind == "dense-list":
            return self.matrices[k]
        raise ValueError(f"unknown loop kind '{self.kind}'")

    def check_closure(self, tol: float = 1e-8) -> None:
        a, b = self.point(0.0), self.point(1.0)
        if isinstance(a, IntegralBundle):
            gap = max(
                np.max(np.abs(a.h - b.h)),
                np.max(np.abs(a.g - b.g)),
                np.max(np.abs(a.overlap_or_identity() - b.overlap_or_identity())),
                abs(a.e_nuc_core - b.e_nuc_core),
            )
        else:
            gap = np.max(np.abs(a - b))
        if gap > tol:
            raise ValueError(f"loop is not closed: |H(0) - H(1)|_max = {gap:.3e}")


def loop_point(loop: LoopSpec, t: float):
    """Hamiltonian source at a declared grid value (no interpolation)."""
    return loop.point(t)


def builtin_loop(name: str, n_steps: int = 25) -> LoopSpec:
    if name not in BUILTIN_LOOPS:
        raise ValueError(f"unknown builtin loop '{name}' (have {BUILTIN_LOOPS})")
    loop = LoopSpec(kind="analytic-qubit", n_points=n_steps + 1, family=name)
    loop.check_closure()
    return loop


def effective_ci_loop(params: EffectiveCIParams, n_steps: int = 25) -> LoopSpec:
    loop = LoopSpec(kind="effective-ci", n_points=n_steps + 1, params=params)
    loop.check_closure()
    return loop


def dense_loop(matrices) -> LoopSpec:
    """In-memory closed family of real symmetric matrices (last entry repeats the first)."""
    mats = [np.asarray(m, dtype=float) for m in matrices]
    for m in mats:
        if np.max(np.abs(m - m.T)) > 1e-10:
            raise ValueError("dense loop matrices must be real symmetric")
    loop = LoopSpec(kind="dense-list", n_points=len(mats), matrices=mats)
    loop.check_closure()
    return loop


def load_loop(path) -> LoopSpec:
    """Load a loop manifest (analytic parameters or bundle list with active space)."""
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    kind = raw.get("kind")
    n_points = int(raw.get("n_points", 0))
    if kind == "analytic-qubit":
        loop = LoopSpec(kind=kind, n_points=n_points, family=raw["family"])
    elif kind == "effective-ci":
        p = raw["params"]
        loop = LoopSpec(kind=kind, n_points=n_points, params=EffectiveCIParams(
            hx=float(p["hx"]), hz=float(p["hz"]),
            r_cross=np.asarray(p["r_cross"], dtype=float),
            center=np.asarray(p["center"], dtype=float),
            radius=float(p["radius"])))
    elif kind == "bundle-list":
        pts = sorted(raw["points"], key=lambda q: float(q["t"]))
        if len(pts) != n_points:
            raise BundleFormatError(f"manifest lists {len(pts)} points but n_points={n_points}")
        paths = [str((path.parent / q["path"]).resolve()) for q in pts]
        c0 = raw.get("initial_c_oao")
        loop = LoopSpec(
            kind=kind, n_points=n_points, bundle_paths=paths,
            active_space=ActiveSpaceSpec.from_dict(raw["active_space"]),
            initial_c_oao=None if c0 is None else np.asarray(c0, dtype=float))
    else:
        raise BundleFormatError(f"unknown loop kind '{kind}' in {path}")
    loop.check_closure()
    return loop
