"""Background wave, residuals and losses for the scattering problem.

The fluid interior obeys the homogeneous Helmholtz equation on the total
pressure (scattered + background); the outer boundary carries a plane
wave radiation condition split into a gradient part and a
wavenumber-weighted part; the fluid-solid interface balances pressure
derivatives against the structural acceleration term omega^2 * (n.u).

Everything here works on plain complex arrays.  The closed-form
plane-wave fields double as manufactured solutions: they satisfy the
interior equation identically and supply displacement and observation
data for desk-scale verification runs.  ``tape_losses`` assembles the
same residuals on a differentiation tape for training.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


class PhysicsError(Exception):
    pass


@dataclass(frozen=True)
class Medium:
    rho: float = 1000.0     # fluid density (kg/m^3)
    c: float = 1481.0       # sound speed (m/s); water at ~20 C

    def __post_init__(self):
        if self.rho <= 0 or self.c <= 0:
            raise PhysicsError("medium properties must be positive")


@dataclass(frozen=True)
class WaveSpec:
    p0: float = 1.0                      # excitation pressure (Pa)
    direction: tuple = (1.0, 0.0)        # unit propagation direction

    def unit_direction(self):
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if n == 0:
            raise PhysicsError("wave direction must be nonzero")
        return d / n


@dataclass(frozen=True)
class ParametricCondition:
    """One member of the PDE family: explicit frequency plus the 50
    implicit metasurface parameters (25 densities, 25 moduli)."""
    f: float
    densities: tuple
    moduli: tuple

    def __post_init__(self):
        if self.f <= 0:
            raise PhysicsError("frequency must be positive")
        if len(self.densities) != 25 or len(self.moduli) != 25:
            raise PhysicsError("expected 25 subunit densities and 25 moduli")

    @property
    def implicit_vector(self):
        return np.concatenate([np.asarray(self.densities, dtype=float),
                               np.asarray(self.moduli, dtype=float)])

    @property
    def omega(self):
        return 2.0 * np.pi * self.f


WAVENUMBER_MODES = ("standard", "paper_literal")


def wavenumber(f, medium, mode="standard"):
    """Wavenumber of the background wave.

    ``standard`` uses the dispersion relation 2*pi*f/c; ``paper_literal``
    uses (2*pi*f)^2/c, which some treatments quote for this system.
    """
    if f <= 0:
        raise PhysicsError("frequency must be positive")
    if mode == "standard":
        return 2.0 * np.pi * f / medium.c
    if mode == "paper_literal":
        return (2.0 * np.pi * f) ** 2 / medium.c
    raise PhysicsError(f"unknown wavenumber mode '{mode}'")


@dataclass
class ComplexField:
    """Per-point complex pressure with optional first and diagonal second
    spatial derivatives (arrays aligned with the point count)."""
    value: np.ndarray                     # (N,) complex
    grad: np.ndarray | None = None        # (N, 2) complex
    second_diag: np.ndarray | None = None # (N, 2) complex

    def __post_init__(self):
        n = len(self.value)
        for arr in (self.grad, self.second_diag):
            if arr is not None and arr.shape != (n, 2):
                raise PhysicsError("derivative arrays must align with points")

    @property
    def laplacian(self):
        if self.second_diag is None:
            raise PhysicsError("second derivatives were not supplied")
        return self.second_diag.sum(axis=1)


@dataclass(frozen=True)
class PlaneWave:
    """A * exp(-i k (x . d)) with closed-form derivatives."""
    amplitude: complex
    k: float
    direction: tuple

    def _dir(self):
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-9:
            raise PhysicsError("plane-wave direction must be a unit vector")
        return d

    def at(self, points):
        """Evaluate value, gradient and diagonal second derivatives."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        d = self._dir()
        val = self.amplitude * np.exp(-1j * self.k * (pts @ d))
        grad = (-1j * self.k) * val[:, None] * d[None, :]
        second = (-self.k ** 2) * val[:, None] * (d ** 2)[None, :]
        return ComplexField(value=val, grad=grad, second_diag=second)


@dataclass(frozen=True)
class FieldSum:
    """Superposition of closed-form fields (same wavenumber in practice)."""
    parts: tuple

    def at(self, points):
        fields = [p.at(points) for p in self.parts]
        return ComplexField(
            value=sum(f.value for f in fields),
            grad=sum(f.grad for f in fields),
            second_diag=sum(f.second_diag for f in fields),
        )


def manufactured_solution(k, amplitude, direction):
    """Closed-form scattered field A*exp(-i k (x.d)); solves the interior
    equation identically and is the verification ground truth."""
    d = np.asarray(direction, dtype=float)
    n = np.linalg.norm(d)
    if abs(n - 1.0) > 1e-9:
        raise PhysicsError("manufactured direction must be a unit vector")
    return PlaneWave(complex(amplitude), float(k), tuple(d))


def background_pressure(points, wave, k):
    """Incident harmonic plane wave with analytic derivatives."""
    pw = PlaneWave(complex(wave.p0), float(k), tuple(wave.unit_direction()))
    return pw.at(points)


def _l1_complex(residual):
    """Mean over points of |Re| + |Im| (the per-point L1 over channels)."""
    return float(np.mean(np.abs(residual.real) + np.abs(residual.imag)))


def residual_pad(ps, pb, k):
    """Interior residual (lap ps + lap pb) + k^2 (ps + pb) and its loss."""
    if ps.second_diag is None or pb.second_diag is None:
        raise PhysicsError("interior residual needs diagonal second derivatives")
    res = (ps.laplacian + pb.laplacian) + k ** 2 * (ps.value + pb.value)
    return res, _l1_complex(res)


def residual_pwr(ps, pb, k, normals, tangents):
    """Radiation-boundary residuals.

    Gradient part: -n . (grad ps + grad pb).  Wavenumber part:
    k ps + (1/2k) * second derivative of ps along the boundary tangent
    (edges are axis-aligned, so the tangential second derivative is the
    tangent-weighted combination of the diagonal terms).
    """
    if k == 0:
        raise PhysicsError("radiation residual is undefined at k = 0")
    if ps.grad is None or pb.grad is None:
        raise PhysicsError("radiation residual needs first derivatives")
    if ps.second_diag is None:
        raise PhysicsError("radiation residual needs second derivatives")
    res_r = -np.sum(normals * (ps.grad + pb.grad), axis=1)
    tang_w = tangents ** 2
    dtt = np.sum(tang_w * ps.second_diag, axis=1)
    res_i = k * ps.value + dtt / (2.0 * k)
    return (res_r, res_i), (_l1_complex(res_r), _l1_complex(res_i))


def residual_asc(ps, pb, normal_displacement, omega, normals,
                 continuum_consistent=False, rho=1.0):
    """Coupling-boundary residual against the supplied displacement data.

    Default form balances the normal-weighted diagonal second
    derivatives of the total pressure against omega^2 * (n.u).  With
    ``continuum_consistent`` the balance uses first derivatives,
    (n . grad p_t)/rho = omega^2 (n.u).
    """
    if normal_displacement is None:
        raise PhysicsError("coupling residual needs displacement data")
    nd = np.asarray(normal_displacement, dtype=complex)
    if continuum_consistent:
        if ps.grad is None or pb.grad is None:
            raise PhysicsError("coupling residual needs first derivatives")
        flux = np.sum(normals * (ps.grad + pb.grad), axis=1) / rho
    else:
        if ps.second_diag is None or pb.second_diag is None:
            raise PhysicsError("coupling residual needs second derivatives")
        flux = np.sum(normals * (ps.second_diag + pb.second_diag), axis=1)
    res = flux - omega ** 2 * nd
    return res, _l1_complex(res)


def derived_displacement(total_field, medium, omega, normals,
                         mode="continuum"):
    """Normal displacement n.u consistent with the manufactured total field.

    ``continuum`` rearranges the first-derivative balance:
    n.u = (n . grad p_t) / (rho * omega^2).  ``literal`` matches the
    discrete second-derivative form instead, so that the default
    coupling residual vanishes at the manufactured truth.
    """
    if omega <= 0:
        raise PhysicsError("omega must be positive")
    if mode == "continuum":
        flux = np.sum(normals * total_field.grad, axis=1)
        return flux / (medium.rho * omega ** 2)
    if mode == "literal":
        flux = np.sum(normals * total_field.second_diag, axis=1)
        return flux / omega ** 2
    raise PhysicsError(f"unknown displacement mode '{mode}'")


def loss_obs(pred, truth):
    """Mean squared complex-magnitude error over the observation points."""
    pred = np.asarray(pred, dtype=complex)
    truth = np.asarray(truth, dtype=complex)
    if pred.shape != truth.shape:
        raise PhysicsError("observation arrays must align")
    if pred.size == 0:
        warnings.warn("no observation points: falling back to pure PDE loss",
                      stacklevel=2)
        return 0.0
    err = pred - truth
    return float(np.mean(err.real ** 2 + err.imag ** 2))


@dataclass
class LossBreakdown:
    l_pad: float = 0.0
    l_pwr_r: float = 0.0
    l_pwr_i: float = 0.0
    l_asc: float = 0.0
    l_obs: float = 0.0
    alpha: float = 1.0
    beta: float = 0.1

    @property
    def pde_sum(self):
        return self.l_pad + self.l_pwr_r + self.l_pwr_i + self.l_asc

    @property
    def total(self):
        return total_loss(self, self.alpha, self.beta)

    def as_row(self):
        return (self.l_pad, self.l_pwr_r, self.l_pwr_i, self.l_asc,
                self.l_obs, self.total)


def total_loss(breakdown, alpha=1.0, beta=0.1):
    """Weighted combination alpha * L_obs + beta * (sum of PDE terms)."""
    if alpha < 0 or beta < 0:
        raise PhysicsError("loss weights must be nonnegative")
    return alpha * breakdown.l_obs + beta * breakdown.pde_sum


# ---------------------------------------------------------------------------
# condition manifests (JSON-facing dicts)


def condition_to_manifest(cond, medium, wave, modes):
    return {
        "f_hz": float(cond.f),
        "densities": [float(v) for v in cond.densities],
        "moduli": [float(v) for v in cond.moduli],
        "medium": {"rho": medium.rho, "c": medium.c},
        "wave": {"p0": wave.p0, "ek": [float(v) for v in wave.direction]},
        "modes": dict(modes),
    }


def condition_from_manifest(doc):
    cond = ParametricCondition(
        f=float(doc["f_hz"]),
        densities=tuple(doc["densities"]),
        moduli=tuple(doc["moduli"]),
    )
    medium = Medium(rho=float(doc["medium"]["rho"]), c=float(doc["medium"]["c"]))
    wave = WaveSpec(p0=float(doc["wave"]["p0"]), direction=tuple(doc["wave"]["ek"]))
    return cond, medium, wave, dict(doc.get("modes", {}))


# ---------------------------------------------------------------------------
# tape-side loss assembly (drives training through the autodiff engine)


@dataclass
class DomainForward:
    """Network output of one domain, still on the tape."""
    coords: ad.Var                 # (N, 2) input leaf
    pred: ad.Var                   # (N, channels)
    normals: np.ndarray | None = None
    tangents: np.ndarray | None = None


def _channel(pred, ch):
    if pred.shape[1] == 1 and ch == 1:
        # real-only output mode: the imaginary channel is fixed at zero
        return None
    return ad.slice_cols(pred, ch, ch + 1)


def _domain_derivs(domain):
    """Per-point first derivatives and diagonal second derivatives of
    every output channel with respect to that point's coordinates.

    One reverse sweep per channel seeded with ones, then one forward
    pass per coordinate axis over the gradient graphs (forward over
    reverse); both channels ride the same forward pass, sharing the
    tangents of the network subgraph.
    """
    tape = domain.pred.tape
    channels = [ch for ch in (0, 1) if _channel(domain.pred, ch) is not None]
    ys, gs = {}, {}
    for ch in channels:
        y = _channel(domain.pred, ch)
        cot = tape.constant(np.ones(y.shape))
        [g] = ad.grad_vars(y, [domain.coords], cot)
        ys[ch], gs[ch] = y, g
    grads = {ch: (ad.slice_cols(g, 0, 1), ad.slice_cols(g, 1, 2))
             for ch, g in gs.items()}
    seconds = {ch: [None, None] for ch in channels}
    g_list = [gs[ch] for ch in channels]
    for axis in range(2):
        tangent = np.zeros(domain.coords.shape)
        tangent[:, axis] = 1.0
        gdots = ad.jvp_vars(g_list, [(domain.coords, tape.constant(tangent))])
        for ch, gdot in zip(channels, gdots):
            seconds[ch][axis] = ad.slice_cols(gdot, axis, axis + 1)
    return channels, ys, grads, seconds


def _mean_abs(v, n):
    return ad.scale(ad.sum_all(ad.absval(v)), 1.0 / n)


def _col_const(tape, arr):
    return tape.constant(np.asarray(arr, dtype=float).reshape(-1, 1))


class _TapeTerms:
    """Collects per-channel residual Vars and reduces them to loss Vars."""

    def __init__(self, tape):
        self.tape = tape

    def l1_loss(self, parts, n):
        # parts: list of per-channel residual Vars (None for absent channel)
        total = None
        for p in parts:
            if p is None:
                continue
            term = _mean_abs(p, n)
            total = term if total is None else total + term
        return total


def tape_losses(tape, domains, pb_fields, k, omega, observations=None,
                obs_truth=None, displacement=None,
                continuum_consistent=False, rho=1.0):
    """Assemble the five loss terms as Vars on ``tape``.

    ``domains`` maps domain names ('interior', 'radiation', 'coupling')
    to DomainForward entries; ``pb_fields`` maps the same names to the
    background ComplexField at those points.  Returns a dict of loss
    Vars (missing domains simply contribute nothing).
    """
    terms = _TapeTerms(tape)
    losses = {}

    dom = domains.get("interior")
    if dom is not None and dom.pred.shape[0] > 0:
        pb = pb_fields["interior"]
        n = dom.pred.shape[0]
        channels, ys, _, secs = _domain_derivs(dom)
        parts = []
        for ch in channels:
            pb_val = pb.value.real if ch == 0 else pb.value.imag
            pb_lap = pb.laplacian.real if ch == 0 else pb.laplacian.imag
            lap = secs[ch][0] + secs[ch][1]
            res = (lap + _col_const(tape, pb_lap)
                   + ad.scale(ys[ch] + _col_const(tape, pb_val), k ** 2))
            parts.append(res)
        losses["pad"] = terms.l1_loss(parts, n)

    dom = domains.get("radiation")
    if dom is not None and dom.pred.shape[0] > 0:
        pb = pb_fields["radiation"]
        n = dom.pred.shape[0]
        nx = _col_const(tape, dom.normals[:, 0])
        ny = _col_const(tape, dom.normals[:, 1])
        wx = _col_const(tape, dom.tangents[:, 0] ** 2)
        wy = _col_const(tape, dom.tangents[:, 1] ** 2)
        channels, ys, grads, secs = _domain_derivs(dom)
        parts_r, parts_i = [], []
        for ch in channels:
            pb_g = pb.grad.real if ch == 0 else pb.grad.imag
            gx = grads[ch][0] + _col_const(tape, pb_g[:, 0])
            gy = grads[ch][1] + _col_const(tape, pb_g[:, 1])
            parts_r.append(-(nx * gx + ny * gy))
            dtt = wx * secs[ch][0] + wy * secs[ch][1]
            parts_i.append(ad.scale(ys[ch], k) + ad.scale(dtt, 1.0 / (2.0 * k)))
        losses["pwr_r"] = terms.l1_loss(parts_r, n)
        losses["pwr_i"] = terms.l1_loss(parts_i, n)

    dom = domains.get("coupling")
    if dom is not None and dom.pred.shape[0] > 0:
        pb = pb_fields["coupling"]
        n = dom.pred.shape[0]
        nx = _col_const(tape, dom.normals[:, 0])
        ny = _col_const(tape, dom.normals[:, 1])
        if displacement is None:
            raise PhysicsError("coupling loss needs displacement data")
        nd = np.asarray(displacement, dtype=complex)
        channels, ys, grads, secs = _domain_derivs(dom)
        parts = []
        for ch in channels:
            nd_ch = nd.real if ch == 0 else nd.imag
            if continuum_consistent:
                pb_g = pb.grad.real if ch == 0 else pb.grad.imag
                fx = grads[ch][0] + _col_const(tape, pb_g[:, 0])
                fy = grads[ch][1] + _col_const(tape, pb_g[:, 1])
                flux = ad.scale(nx * fx + ny * fy, 1.0 / rho)
            else:
                pb_s = pb.second_diag.real if ch == 0 else pb.second_diag.imag
                sx = secs[ch][0] + _col_const(tape, pb_s[:, 0])
                sy = secs[ch][1] + _col_const(tape, pb_s[:, 1])
                flux = nx * sx + ny * sy
            parts.append(flux - ad.scale(_col_const(tape, nd_ch), omega ** 2))
        losses["asc"] = terms.l1_loss(parts, n)

    if observations is not None and obs_truth is not None:
        total_n = sum(len(idx) for idx in observations.values())
        if total_n > 0:
            acc = None
            for name, idx in observations.items():
                if len(idx) == 0:
                    continue
                dom = domains[name]
                rows = ad.gather_rows(dom.pred, idx)
                truth = obs_truth[name]
                for ch, tval in ((0, truth.real), (1, truth.imag)):
                    y = _channel(rows, ch)
                    if y is None:
                        continue
                    err = y - _col_const(tape, tval)
                    sq = ad.sum_all(err * err)
                    acc = sq if acc is None else acc + sq
            losses["obs"] = ad.scale(acc, 1.0 / total_n)
        else:
            losses["obs"] = None
    return losses


def combine_losses(tape, losses, alpha=1.0, beta=0.1):
    """alpha * L_obs + beta * (PDE terms); returns (total Var, breakdown)."""
    zero = tape.constant(np.zeros((1, 1)))

    def get(name):
        v = losses.get(name)
        return v if v is not None else zero

    pde = get("pad") + get("pwr_r") + get("pwr_i") + get("asc")
    total = ad.scale(get("obs"), alpha) + ad.scale(pde, beta)
    breakdown = LossBreakdown(
        l_pad=float(get("pad").value), l_pwr_r=float(get("pwr_r").value),
        l_pwr_i=float(get("pwr_i").value), l_asc=float(get("asc").value),
        l_obs=float(get("obs").value), alpha=alpha, beta=beta)
    return total, breakdown
