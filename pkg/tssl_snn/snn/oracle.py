"""Independent checks of the backward-pass mathematics.

* `phi_direct` re-evaluates the phi case table with plain Python loops.
* `spike_shift_check` compares the firing-time shift predicted from the
  membrane slope against a fine-step simulation of the continuous neuron.
* `loss_fd_check` compares the analytic loss gradient with central
  differences on the smooth PSC-to-loss segment.
"""

import math
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import torch

from ..errors import ConfigurationError
from .backprop import BackpropConfig, PhiTable, du_dt_at_spike
from .loss import LossReport, loss_gradient
from .neuron import NeuronConfig, NeuronTrace, SpikeRecord, psc_filter

__all__ = [
    "phi_direct",
    "random_phi_instance",
    "ShiftExperiment",
    "ShiftResult",
    "FineRun",
    "simulate_fine",
    "spike_shift_check",
    "steep_circuit",
    "graze_circuit",
    "FdReport",
    "loss_fd_check",
    "loss_fd_convergence",
]


# ---------------------------------------------------------------------------
# phi by direct substitution
# ---------------------------------------------------------------------------


def phi_direct(
    raster: SpikeRecord,
    trace: NeuronTrace,
    cfg: NeuronConfig,
    backprop: Optional[BackpropConfig] = None,
) -> PhiTable:
    backprop = backprop or BackpropConfig()
    n_steps = trace.n_steps
    shape = tuple(trace.u.shape[:-1])
    u = trace.u.reshape(-1, n_steps).tolist()
    i_net = trace.i_net.reshape(-1, n_steps).tolist()
    s = raster.raster.reshape(-1, n_steps).tolist()
    eps = (
        backprop.slope_eps
        if backprop.slope_eps is not None
        else 0.1 * cfg.v_th / cfg.tau_m
    )
    sign = 1.0 if backprop.psc_convention == "onset" else -1.0

    values = []
    for n in range(len(u)):
        fires = [t for t in range(n_steps) if s[n][t] > 0.5]
        memo = {}

        def phi(k, m):
            if (k, m) in memo:
                return memo[(k, m)]
            if k < m or m not in fires:
                return 0.0
            slope = max((-u[n][m] + i_net[n][m]) / cfg.tau_m, eps)
            dtm_du = -1.0 / slope
            total = sign * math.exp(-(k - m) / cfg.tau_s) / cfg.tau_s * dtm_du
            later = [p for p in fires if m < p < k]
            if later:
                p = later[0]
                dreset = -(cfg.v_th / cfg.tau_m) * math.exp(-(p - m) / cfg.tau_m)
                total += phi(k, p) * dreset * dtm_du
            memo[(k, m)] = total
            return total

        table = [[phi(k, m) for m in range(n_steps)] for k in range(n_steps)]
        if backprop.dead_kappa > 0 and not fires:
            for t in range(n_steps):
                sig = 1.0 / (1.0 + math.exp(-(u[n][t] - cfg.v_th)))
                table[t][t] = backprop.dead_kappa * sig * (1.0 - sig)
        values.append(table)

    dense = torch.tensor(values, dtype=torch.float64).reshape(*shape, n_steps, n_steps)
    return PhiTable.from_dense(dense)


def random_phi_instance(
    rng: random.Random, max_neurons: int = 5, max_steps: int = 10
) -> tuple:
    """
    A random ``(trace, spikes, cfg)`` for phi comparisons.

    Membrane values are consistent with the raster (``u >= v_th`` exactly at
    firing steps); time constants are drawn from ``[1.5, 8]``.
    """
    n = rng.randint(1, max_neurons)
    t = rng.randint(1, max_steps)
    cfg = NeuronConfig(
        tau_m=rng.uniform(1.5, 8.0), tau_s=rng.uniform(1.5, 8.0), v_th=rng.uniform(0.5, 2.0)
    )
    raster = torch.tensor(
        [[float(rng.random() < 0.4) for _ in range(t)] for _ in range(n)],
        dtype=torch.float64,
    )
    below = torch.tensor([[rng.random() for _ in range(t)] for _ in range(n)], dtype=torch.float64)
    above = torch.tensor([[rng.random() for _ in range(t)] for _ in range(n)], dtype=torch.float64)
    u = torch.where(raster > 0, cfg.v_th * (1.0 + above), cfg.v_th * below)
    i_net = torch.tensor(
        [[rng.uniform(0.0, 3.0) * cfg.v_th for _ in range(t)] for _ in range(n)],
        dtype=torch.float64,
    )
    trace = NeuronTrace(u=u, a=psc_filter(raster, cfg.tau_s), i_net=i_net)
    return trace, SpikeRecord(raster), cfg


# ---------------------------------------------------------------------------
# firing-time shift against a fine-step continuous simulation
# ---------------------------------------------------------------------------


@dataclass
class ShiftExperiment:
    """
    One presynaptic PSC channel driving one LIF neuron.

    Parameters
    ----------
    weight : float
        Synaptic weight of the unperturbed circuit.
    delta_w : float
        Weight perturbation of the second circuit.
    input_spikes : sequence of float, default=(0.0,)
        Presynaptic spike times.
    window : float, default=5.0
        Simulated duration in time units.
    subdivision : int, default=100
        Fine steps per time unit. Must be >= 10.
    neuron : NeuronConfig
    slope_eps : float, optional
        Clamp for the predicted slope; defaults to ``0.1 * v_th / tau_m``.
    """

    weight: float
    delta_w: float
    input_spikes: Sequence[float] = (0.0,)
    window: float = 5.0
    subdivision: int = 100
    neuron: NeuronConfig = field(default_factory=NeuronConfig)
    slope_eps: Optional[float] = None

    def __post_init__(self):
        if self.subdivision < 10:
            raise ConfigurationError(
                f"subdivision must be >= 10, got {self.subdivision}"
            )
        if any(t < 0 for t in self.input_spikes):
            raise ConfigurationError("input spike times must be >= 0")


@dataclass
class FineRun:
    """Fine-grid potential (``u[j]`` at time ``j * h``) and interpolated crossings."""

    u: np.ndarray
    psc: np.ndarray
    crossings: list
    crossing_psc: list


@dataclass
class ShiftResult:
    relative_error: float
    measured: float
    predicted: float
    clamped: bool
    valid: bool
    reason: str = ""


def simulate_fine(exp: ShiftExperiment, weight: float, threshold: bool = True) -> FineRun:
    """
    Integrate ``tau_m du/dt = -u + w * a(t)`` with forward Euler at ``1 / subdivision``.

    The PSC ``a`` jumps by 1 at every input spike and decays exactly with
    ``tau_s``. Threshold crossings are located by linear interpolation between
    fine steps and followed by reset by subtraction.
    """
    cfg = exp.neuron
    h = 1.0 / exp.subdivision
    n_fine = int(round(exp.window * exp.subdivision))
    arrivals = {}
    for ts in exp.input_spikes:
        j = int(round(ts / h))
        arrivals[j] = arrivals.get(j, 0) + 1
    decay = math.exp(-h / cfg.tau_s)

    u_grid = np.zeros(n_fine + 1)
    a_grid = np.zeros(n_fine + 1)
    crossings, crossing_psc = [], []
    u, a = 0.0, 0.0
    for j in range(n_fine):
        a += arrivals.get(j, 0)
        a_grid[j] = a
        u_next = u + (h / cfg.tau_m) * (-u + weight * a)
        if threshold and u_next >= cfg.v_th:
            frac = (cfg.v_th - u) / (u_next - u)
            crossings.append((j + frac) * h)
            crossing_psc.append(a * math.exp(-frac * h / cfg.tau_s))
            u_next -= cfg.v_th
        a *= decay
        u = u_next
        u_grid[j + 1] = u
    a_grid[n_fine] = a
    return FineRun(u=u_grid, psc=a_grid, crossings=crossings, crossing_psc=crossing_psc)


def _free_response(exp: ShiftExperiment, t: float) -> float:
    free = simulate_fine(exp, 1.0, threshold=False)
    pos = t * exp.subdivision
    j = min(int(math.floor(pos)), len(free.u) - 2)
    frac = pos - j
    return free.u[j] + frac * (free.u[j + 1] - free.u[j])


def spike_shift_check(exp: ShiftExperiment) -> ShiftResult:
    """
    Relative error between measured and predicted first-spike shift.

    The prediction is ``-delta_u / (du/dt)`` where ``delta_u`` is the potential
    change the weight perturbation causes at the unperturbed firing time and
    ``du/dt`` the clamped slope there. A change in spike count makes the
    experiment invalid; that is reported, not raised.
    """
    cfg = exp.neuron
    base = simulate_fine(exp, exp.weight)
    perturbed = simulate_fine(exp, exp.weight + exp.delta_w)
    if not base.crossings or not perturbed.crossings:
        return ShiftResult(math.nan, math.nan, math.nan, False, False, "circuit does not fire")
    if len(base.crossings) != len(perturbed.crossings):
        return ShiftResult(
            math.nan,
            math.nan,
            math.nan,
            False,
            False,
            f"spike count changed {len(base.crossings)} -> {len(perturbed.crossings)}",
        )

    t_star = base.crossings[0]
    i_net = exp.weight * base.crossing_psc[0]
    spike_trace = NeuronTrace(
        u=torch.tensor([cfg.v_th], dtype=torch.float64),
        a=torch.tensor([base.crossing_psc[0]], dtype=torch.float64),
        i_net=torch.tensor([i_net], dtype=torch.float64),
    )
    eps = BackpropConfig(slope_eps=exp.slope_eps).resolve_slope_eps(cfg)
    slope = float(du_dt_at_spike(spike_trace, 0, cfg, eps))
    clamped = (-cfg.v_th + i_net) / cfg.tau_m < eps

    delta_u = exp.delta_w * _free_response(exp, t_star)
    predicted = -delta_u / slope
    measured = perturbed.crossings[0] - t_star

    if measured == 0.0 and predicted == 0.0:
        error = 0.0
    elif measured == 0.0:
        error = math.inf
    else:
        error = abs(measured - predicted) / abs(measured)
    return ShiftResult(error, measured, predicted, bool(clamped), True)


def _peak_free_response(exp: ShiftExperiment) -> float:
    return float(simulate_fine(exp, 1.0, threshold=False).u.max())


def steep_circuit(
    rng: random.Random,
    delta_w: float = 1e-3,
    subdivision: int = 100,
    window: float = 3.0,
) -> ShiftExperiment:
    """A circuit driven two to four times above what it needs to reach threshold."""
    cfg = NeuronConfig(tau_m=rng.uniform(2.0, 8.0), tau_s=rng.uniform(2.0, 8.0))
    unit = ShiftExperiment(1.0, 0.0, window=window, subdivision=subdivision, neuron=cfg)
    weight = cfg.v_th / _peak_free_response(unit) * rng.uniform(2.0, 4.0)
    return ShiftExperiment(
        weight, delta_w, window=window, subdivision=subdivision, neuron=cfg
    )


def graze_circuit(
    neuron: Optional[NeuronConfig] = None,
    delta_w: float = 1e-3,
    subdivision: int = 100,
    window: float = 10.0,
) -> ShiftExperiment:
    """A circuit whose potential peaks just above threshold, so its slope is near zero."""
    cfg = neuron or NeuronConfig()
    unit = ShiftExperiment(1.0, 0.0, window=window, subdivision=subdivision, neuron=cfg)
    weight = 1.0001 * cfg.v_th / _peak_free_response(unit)
    return ShiftExperiment(
        weight, delta_w, window=window, subdivision=subdivision, neuron=cfg
    )


# ---------------------------------------------------------------------------
# smooth-segment finite differences of the loss
# ---------------------------------------------------------------------------


@dataclass
class FdReport:
    max_relative_error: float
    analytic: torch.Tensor
    numeric: torch.Tensor


def loss_fd_check(
    output_psc: torch.Tensor,
    target: torch.Tensor,
    kernel_tau: float,
    h: float = 1e-4,
) -> FdReport:
    """
    Central differences of the loss with respect to every output PSC entry.

    `output_psc` is the filtered output ``[n_out, n_steps]`` (or batched);
    `target` is the desired raster, filtered here with `kernel_tau`.
    """
    x = torch.as_tensor(output_psc, dtype=torch.float64)
    desired = psc_filter(torch.as_tensor(target, dtype=torch.float64), kernel_tau)
    analytic = loss_gradient(x, desired)

    numeric = torch.empty_like(x)
    flat = x.reshape(-1)
    out = numeric.reshape(-1)
    for idx in range(flat.numel()):
        plus = flat.clone()
        minus = flat.clone()
        plus[idx] += h
        minus[idx] -= h
        l_plus = LossReport.from_filtered(plus.reshape(x.shape), desired).sum()
        l_minus = LossReport.from_filtered(minus.reshape(x.shape), desired).sum()
        out[idx] = (l_plus - l_minus) / (2.0 * h)

    # relative to the largest gradient entry of the trace
    scale = torch.maximum(analytic.abs().max(), numeric.abs().max()).clamp(min=1e-12)
    rel = (numeric - analytic).abs().max() / scale
    return FdReport(max_relative_error=float(rel), analytic=analytic, numeric=numeric)


def loss_fd_convergence(
    output_psc: torch.Tensor,
    target: torch.Tensor,
    kernel_tau: float,
    steps: Sequence[float] = (1e-3, 5e-4, 2.5e-4),
) -> pd.DataFrame:
    """`loss_fd_check` over several step sizes, with the ``h**2`` envelope."""
    rows = []
    for h in steps:
        report = loss_fd_check(output_psc, target, kernel_tau, h=h)
        rows.append(
            {"h": h, "max_relative_error": report.max_relative_error, "envelope": h * h}
        )
    return pd.DataFrame(rows)
