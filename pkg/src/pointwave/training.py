"""Condition sets, the RAdam + LookAhead optimizer and the training loop.

One optimizer step processes one parametric condition over the full
cloud (mini-batching points would break the per-domain max pooling).
Each step records a fresh tape: forward pass, coordinate derivatives,
loss assembly, then a single numeric reverse sweep for the parameter
gradients.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from . import network as nw
from . import physics as ph


class TrainingError(Exception):
    pass


class TrainingDiverged(TrainingError):
    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss {loss})")


WATER_DENSITY = 1000.0          # kg/m^3
WATER_MODULUS = 2.25e6          # Pa
DENSITY_RANGE = (WATER_DENSITY / 3.0, 2.0 * WATER_DENSITY)
MODULUS_RANGE = (WATER_MODULUS / 3.0, 5.0 * WATER_MODULUS)
FREQ_RANGE = (300.0, 500.0)


@dataclass
class Dataset:
    split: str                                   # "train" or "test"
    conditions: list

    def __len__(self):
        return len(self.conditions)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lookahead_k: int = 5
    lookahead_alpha: float = 0.5
    alpha: float = 1.0           # observation-loss weight
    beta: float = 0.1            # PDE-loss weight
    seed: int = 0
    checkpoint_every: int = 0    # 0 = final checkpoint only
    snapshot_epochs: tuple = ()
    divergence_limit: float = 1e6


# ---------------------------------------------------------------------------
# condition sampling


def _draw_condition(rng, f):
    dens = rng.uniform(*DENSITY_RANGE, size=25)
    modu = rng.uniform(*MODULUS_RANGE, size=25)
    return ph.ParametricCondition(f=float(f), densities=tuple(dens),
                                  moduli=tuple(modu))


def build_dataset(case, seed, n_train=1000, n_test=200):
    """Deterministic train/test condition sets for a case selector.

    case1: fixed 300 Hz, varying metasurface parameters.  case2: fixed
    water-like parameters, varying frequency.  case3: 12 parameter
    groups crossed with 100 frequencies, split 1000/200.  manufactured:
    the single desk-scale condition.
    """
    rng = np.random.default_rng(seed)
    if case == "case1":
        train = [_draw_condition(rng, 300.0) for _ in range(n_train)]
        test = [_draw_condition(rng, 300.0) for _ in range(n_test)]
    elif case == "case2":
        base = _draw_condition(rng, FREQ_RANGE[0])
        train = [replace(base, f=float(f))
                 for f in rng.uniform(*FREQ_RANGE, size=n_train)]
        test = [replace(base, f=float(f))
                for f in rng.uniform(*FREQ_RANGE, size=n_test)]
    elif case == "case3":
        groups = [(tuple(rng.uniform(*DENSITY_RANGE, size=25)),
                   tuple(rng.uniform(*MODULUS_RANGE, size=25)))
                  for _ in range(12)]
        freqs = rng.uniform(*FREQ_RANGE, size=100)
        combos = [ph.ParametricCondition(f=float(f), densities=d, moduli=m)
                  for d, m in groups for f in freqs]
        order = rng.permutation(len(combos))
        train = [combos[i] for i in order[:n_train]]
        test = [combos[i] for i in order[n_train:n_train + n_test]]
    elif case == "manufactured":
        train = [_draw_condition(rng, 1.0)]
        test = []
    else:
        raise TrainingError(f"unknown case '{case}'")

    seen = {_condition_key(c) for c in train}
    deduped = []
    for c in test:
        while _condition_key(c) in seen:
            c = _draw_condition(rng, c.f)
        seen.add(_condition_key(c))
        deduped.append(c)
    return Dataset("train", train), Dataset("test", deduped)


def _condition_key(c):
    return (c.f, c.densities, c.moduli)


def implicit_stats(conditions):
    """Population mean/std per implicit quantity over the training set."""
    mat = np.stack([c.implicit_vector for c in conditions])
    mu = mat.mean(axis=0)
    sigma = mat.std(axis=0)
    sigma[sigma == 0] = 1.0     # single-condition sets would otherwise vanish
    return mu.reshape(1, -1), sigma.reshape(1, -1)


# ---------------------------------------------------------------------------
# the desk-scale manufactured problem


@dataclass
class ConditionData:
    k: float
    omega: float
    pb: dict                    # domain name -> ComplexField
    displacement: np.ndarray    # (N3,) complex, n.u on the coupling points
    obs_indices: dict | None    # domain name -> int array
    obs_truth: dict | None      # domain name -> complex array


@dataclass
class ManufacturedProblem:
    """Unit-square verification setup with a closed-form scattered field.

    The total pressure is a standing wave whose normal derivative
    vanishes on the outer edges, so the manufactured truth satisfies the
    interior equation and the gradient part of the radiation condition
    exactly; coupling displacement data are derived from the same field.
    """
    cloud: geo.PointCloudSet
    config: geo.CaseConfig
    medium: ph.Medium
    wave: ph.WaveSpec
    truth: ph.FieldSum                     # scattered field p_s
    obs: geo.ObservationSet | None
    wavenumber_mode: str = "standard"
    continuum_consistent: bool = False

    DOMAIN_TAGS = {
        "interior": geo.DomainTag.PRESSURE_ACOUSTIC,
        "radiation": geo.DomainTag.PLANE_WAVE_RADIATION,
        "coupling": geo.DomainTag.ACOUSTIC_STRUCTURE_COUPLING,
    }

    def clouds(self):
        return {"interior": self.cloud.interior,
                "radiation": self.cloud.radiation_points,
                "coupling": self.cloud.coupling_points}

    def truth_values(self, name):
        return self.truth.at(self.clouds()[name]).value

    def condition_data(self, cond, with_observations=True):
        k = ph.wavenumber(cond.f, self.medium, self.wavenumber_mode)
        omega = cond.omega
        pb = {name: ph.background_pressure(pts, self.wave, k)
              for name, pts in self.clouds().items()}
        ps_c = self.truth.at(self.cloud.coupling_points)
        pb_c = pb["coupling"]
        p_total = ph.ComplexField(ps_c.value + pb_c.value,
                                  ps_c.grad + pb_c.grad,
                                  ps_c.second_diag + pb_c.second_diag)
        mode = "continuum" if self.continuum_consistent else "literal"
        displacement = ph.derived_displacement(
            p_total, self.medium, omega, self.cloud.coupling_normals, mode)
        obs_idx = obs_truth = None
        if with_observations and self.obs is not None:
            obs_idx, obs_truth = {}, {}
            for name, tag in self.DOMAIN_TAGS.items():
                obs_idx[name] = self.obs.indices[tag]
                obs_truth[name] = self.obs.values[tag]
        return ConditionData(k=k, omega=omega, pb=pb,
                             displacement=displacement,
                             obs_indices=obs_idx, obs_truth=obs_truth)


def build_manufactured_problem(seed, continuum_consistent=False,
                               wavenumber_mode="standard", config=None):
    """Desk-scale problem: k*L ~ 6 standing wave over the unit square.

    Frequency 1 Hz with unit sound speed gives k = 2*pi, so the truth
    p_t = 2 cos(2*pi*x) is the superposition of two counter-propagating
    unit plane waves; the scattered truth subtracts the oblique
    background wave.  All data (observations, displacement) come from
    the same closed form, so the configured residuals vanish at truth
    except the wavenumber part of the radiation condition.
    """
    config = config or geo.manufactured_case()
    cloud = geo.build_case_geometry(config, seed)
    medium = ph.Medium(rho=1.0, c=1.0)
    wave = ph.WaveSpec(p0=1.0, direction=(np.sqrt(3.0) / 2.0, 0.5))
    k = ph.wavenumber(1.0, medium, wavenumber_mode)
    truth = ph.FieldSum((
        ph.PlaneWave(1.0 + 0j, k, (1.0, 0.0)),
        ph.PlaneWave(1.0 + 0j, k, (-1.0, 0.0)),
        ph.PlaneWave(-wave.p0 + 0j, k, tuple(wave.unit_direction())),
    ))
    problem = ManufacturedProblem(
        cloud=cloud, config=config, medium=medium, wave=wave, truth=truth,
        obs=None, wavenumber_mode=wavenumber_mode,
        continuum_consistent=continuum_consistent)
    counts = config.obs_counts
    if sum(counts) > 0:
        truth_by_tag = {tag: problem.truth_values(name)
                        for name, tag in problem.DOMAIN_TAGS.items()}
        problem.obs = geo.sample_observations(cloud, counts, seed, truth_by_tag)
    return problem


# ---------------------------------------------------------------------------
# optimizers


def radam_step(tensors, grads, state, cfg):
    """One rectified-Adam update (in place).

    While the variance-rectification term rho_t stays at or below 4 the
    update is plain bias-corrected momentum; afterwards the rectified
    adaptive step applies.
    """
    b1, b2 = cfg.beta1, cfg.beta2
    state["t"] += 1
    t = state["t"]
    rho_inf = 2.0 / (1.0 - b2) - 1.0
    rho_t = rho_inf - 2.0 * t * b2 ** t / (1.0 - b2 ** t)
    for name in state["m"]:
        g = grads[name]
        if np.isnan(g).any():
            raise TrainingError(f"NaN gradient for parameter '{name}'")
        m = state["m"][name]
        v = state["v"][name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / (1.0 - b1 ** t)
        if rho_t > 4.0:
            vhat = np.sqrt(v / (1.0 - b2 ** t))
            r = np.sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                        / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
            tensors[name] -= cfg.lr * r * mhat / (vhat + cfg.eps)
        else:
            tensors[name] -= cfg.lr * mhat
    return tensors, state


def radam_state(tensors, names):
    return {"t": 0,
            "m": {n: np.zeros_like(tensors[n]) for n in names},
            "v": {n: np.zeros_like(tensors[n]) for n in names}}


def lookahead_step(fast, slow, alpha):
    """Slow-weight sync: slow += alpha * (fast - slow); fast <- slow.

    alpha == 1 copies the fast weights bit-for-bit, which makes
    (k=1, alpha=1) behaviourally identical to the inner optimizer.
    """
    for name in slow:
        if alpha == 1.0:
            slow[name] = fast[name].copy()
        else:
            slow[name] = (1.0 - alpha) * slow[name] + alpha * fast[name]
        fast[name] = slow[name].copy()
    return fast, slow


class Lookahead:
    """Counts inner steps and syncs the slow weights every k of them."""

    def __init__(self, names, tensors, k, alpha):
        if k < 1:
            raise TrainingError("lookahead k must be >= 1")
        if not 0.0 <= alpha <= 1.0:
            raise TrainingError("lookahead alpha must lie in [0, 1]")
        self.k = k
        self.alpha = alpha
        self.counter = 0
        self.slow = {n: tensors[n].copy() for n in names}

    def after_inner_step(self, tensors):
        self.counter += 1
        if self.counter >= self.k:
            lookahead_step(tensors, self.slow, self.alpha)
            self.counter = 0


# ---------------------------------------------------------------------------
# the loop


def _domain_forward(outs, cloud):
    domains = {}
    if "interior" in outs:
        domains["interior"] = ph.DomainForward(
            coords=outs["interior"]["coords"], pred=outs["interior"]["pred"])
    if "radiation" in outs:
        domains["radiation"] = ph.DomainForward(
            coords=outs["radiation"]["coords"], pred=outs["radiation"]["pred"],
            normals=cloud.radiation_normals, tangents=cloud.radiation_tangents)
    if "coupling" in outs:
        domains["coupling"] = ph.DomainForward(
            coords=outs["coupling"]["coords"], pred=outs["coupling"]["pred"],
            normals=cloud.coupling_normals, tangents=cloud.coupling_tangents)
    return domains


def condition_step_loss(model, problem, cond, alpha, beta):
    """Build the tape for one condition; returns (total Var, breakdown,
    param leaf Vars)."""
    tape = ad.Tape(check_nan=False)
    outs, pvars = nw.forward(tape, model, problem.clouds(), cond)
    domains = _domain_forward(outs, problem.cloud)
    data = problem.condition_data(cond)
    losses = ph.tape_losses(
        tape, domains, data.pb, data.k, data.omega,
        observations=data.obs_indices, obs_truth=data.obs_truth,
        displacement=data.displacement,
        continuum_consistent=problem.continuum_consistent,
        rho=problem.medium.rho)
    total, breakdown = ph.combine_losses(tape, losses, alpha, beta)
    return total, breakdown, pvars


def train(model, dataset, problem, config, out_dir=None):
    """Optimize the model over the training conditions.

    Returns (model, history) where history holds one LossBreakdown per
    epoch (mean of the per-condition steps).  When ``out_dir`` is given,
    checkpoints ``ckpt_{epoch}.bin`` and ``history.csv`` are written
    there; on divergence the last checkpoint is retained and
    TrainingDiverged raised.
    """
    if len(dataset.conditions) == 0:
        raise TrainingError("dataset has no conditions")
    names = model.trainable_names()
    opt_state = radam_state(model.tensors, names)
    lookahead = Lookahead(names, model.tensors, config.lookahead_k,
                          config.lookahead_alpha)
    rng = np.random.default_rng(config.seed)
    history = []

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        nw.save_checkpoint(model, os.path.join(out_dir, "ckpt_0.bin"))

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(dataset.conditions))
        rows = []
        for ci in order:
            cond = dataset.conditions[ci]
            total, breakdown, pvars = condition_step_loss(
                model, problem, cond, config.alpha, config.beta)
            loss_val = float(total.value)
            if not np.isfinite(loss_val) or loss_val > config.divergence_limit:
                if out_dir:
                    _write_history(history, out_dir)
                raise TrainingDiverged(epoch, loss_val)
            grads = ad._backward_numeric(total, [pvars[n] for n in names])
            radam_step(model.tensors, dict(zip(names, grads)), opt_state,
                       config)
            lookahead.after_inner_step(model.tensors)
            rows.append(breakdown)
        history.append(_mean_breakdown(rows, config.alpha, config.beta))
        if out_dir and _wants_checkpoint(epoch, config):
            nw.save_checkpoint(model, os.path.join(out_dir, f"ckpt_{epoch}.bin"))

    if out_dir:
        if config.epochs > 0 and not _wants_checkpoint(config.epochs, config):
            nw.save_checkpoint(model,
                               os.path.join(out_dir, f"ckpt_{config.epochs}.bin"))
        _write_history(history, out_dir)
    return model, history


def _wants_checkpoint(epoch, config):
    if epoch in config.snapshot_epochs:
        return True
    if config.checkpoint_every and epoch % config.checkpoint_every == 0:
        return True
    return epoch == config.epochs


def _mean_breakdown(rows, alpha, beta):
    return ph.LossBreakdown(
        l_pad=float(np.mean([r.l_pad for r in rows])),
        l_pwr_r=float(np.mean([r.l_pwr_r for r in rows])),
        l_pwr_i=float(np.mean([r.l_pwr_i for r in rows])),
        l_asc=float(np.mean([r.l_asc for r in rows])),
        l_obs=float(np.mean([r.l_obs for r in rows])),
        alpha=alpha, beta=beta)


def history_to_csv(history):
    lines = ["epoch,L_pad,L_pwr_r,L_pwr_i,L_asc,L_obs,total"]
    for epoch, row in enumerate(history, start=1):
        vals = ",".join(repr(float(v)) for v in row.as_row())
        lines.append(f"{epoch},{vals}")
    return "\n".join(lines) + "\n"


def _write_history(history, out_dir):
    with open(os.path.join(out_dir, "history.csv"), "w", newline="\n") as f:
        f.write(history_to_csv(history))
