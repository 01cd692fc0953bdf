"""Spectral diagnostics of first-layer weights, phase statistics and preactivation maps.

Weights are Fourier transformed per input slot (columns 0..p-1 and p..2p-1
of W1 separately, each of period p); the IPR normalization runs over all 2p
bins of the two slots together.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .modtask import ModularTask
from .network import NetworkParams, activate


def slot_spectra(W1: np.ndarray) -> np.ndarray:
    """Complex DFT of each slot: shape (N, 2, p), bin nu at [..., nu]."""
    N, D = W1.shape
    p = D // 2
    return np.fft.fft(W1.reshape(N, 2, p), axis=-1)


def ipr_from_spectra(spec: np.ndarray, r: float = 2.0) -> np.ndarray:
    """IPR_r per neuron from (N, 2, p) spectra.  All-zero rows give nan."""
    power = np.abs(spec.reshape(spec.shape[0], -1)) ** 2
    total = power.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        share = power / total[:, None]
    # |w|^(2r) = share^r
    return np.sum(share**r, axis=1)


def ipr(params: NetworkParams, r: float = 2.0) -> np.ndarray:
    """Per-neuron IPR_r of the first-layer weights."""
    return ipr_from_spectra(slot_spectra(params.W1), r)


def avg_ipr(params: NetworkParams, r: float = 2.0) -> float:
    return float(np.mean(ipr(params, r)))


def _dominant(spec_slot: np.ndarray):
    """(bin, share of slot energy at +-bin, second/first energy ratio) for one slot."""
    p = spec_slot.shape[-1]
    power = np.abs(spec_slot) ** 2
    total = power.sum()
    half = power[1:p // 2 + 1]
    if total == 0 or half.size == 0:
        return 0, 0.0, 1.0
    order = np.argsort(half, kind="stable")[::-1]
    nu = int(order[0]) + 1
    second = half[order[1]] if half.size > 1 else 0.0
    mirror = p - nu
    e = power[nu] + (power[mirror] if mirror != nu else 0.0)
    ratio = second / half[order[0]] if half[order[0]] > 0 else 1.0
    return nu, float(e / total), float(ratio)


@dataclass
class SpectralProfile:
    neuron: int
    magnitudes: np.ndarray        # length 2p, jointly normalized
    dominant_freq: tuple          # per slot, in 1..p//2
    extracted_phase: tuple        # per slot
    fit_residual: tuple           # per slot, 1 - energy share at +-dominant bin
    ipr: dict = field(default_factory=dict)

    def ipr_r(self, r: float) -> float:
        return float(np.sum(self.magnitudes ** (2 * r)))


def weight_spectrum(params: NetworkParams, k: int, rs=(1, 2)) -> SpectralProfile:
    if not 0 <= k < params.N:
        raise ConfigError(f"neuron {k} out of range for N={params.N}")
    spec = slot_spectra(params.W1[k:k + 1])[0]
    mags = np.abs(spec).reshape(-1)
    norm = np.sqrt(np.sum(mags**2))
    mags = mags / norm if norm > 0 else mags
    doms, phases, resid = [], [], []
    for s in range(2):
        nu, share, _ = _dominant(spec[s])
        doms.append(nu)
        phases.append(float(np.angle(spec[s, nu])) % (2 * np.pi))
        resid.append(1.0 - share)
    prof = SpectralProfile(k, mags, tuple(doms), tuple(phases), tuple(resid))
    prof.ipr = {r: prof.ipr_r(r) for r in rs}
    return prof


def wrap_phase(x):
    """Map angles to (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    return np.where(y == -np.pi, np.pi, y)


@dataclass
class PhaseReport:
    neurons: np.ndarray          # indices of neurons kept
    phases: np.ndarray           # (len(neurons), 3): phi1, phi2, phi3 estimates
    frequencies: np.ndarray      # (len(neurons),) shared dominant bin
    residuals: np.ndarray        # phi1 + phi2 - phi3 wrapped to (-pi, pi]
    fit_residuals: np.ndarray    # (len(neurons), 3)
    degenerate: int = 0          # neurons without a clear dominant bin
    mismatched: int = 0          # neurons whose three dominant bins disagree
    bins: int = 32

    def histogram(self, bins=None):
        bins = self.bins if bins is None else bins
        return np.histogram(self.residuals, bins=bins, range=(-np.pi, np.pi))

    def mass_within(self, width: float) -> float:
        """Fraction of residuals with |residual| < width."""
        if len(self.residuals) == 0:
            return 0.0
        return float(np.mean(np.abs(self.residuals) < width))

    def concentration(self, width: float = np.pi / 8) -> float:
        """Mass within +-width relative to a uniform distribution on the circle."""
        return self.mass_within(width) / (width / np.pi)


def extract_phases(params: NetworkParams, margin: float = 0.1) -> PhaseReport:
    """Per-neuron phase triples from W1 slots and the W2 column.

    The phase of a slot is the argument of its DFT coefficient at the dominant
    positive bin nu, so cos(2 pi nu n / p + phi) yields phi exactly.  W2
    columns are read the same way, W2[q, k] = cos(2 pi nu q / p + phi3).  A
    slot is degenerate when its second-largest positive bin carries at least
    ``1 - margin`` of the energy of the largest one.
    """
    spec1 = slot_spectra(params.W1)
    spec2 = np.fft.fft(params.W2.T, axis=-1)
    keep, triples, freqs, fits = [], [], [], []
    degenerate = mismatched = 0
    for k in range(params.N):
        slots = (spec1[k, 0], spec1[k, 1], spec2[k])
        info = [_dominant(s) for s in slots]
        if any(ratio >= 1.0 - margin for _, _, ratio in info):
            degenerate += 1
            continue
        nus = {nu for nu, _, _ in info}
        if len(nus) != 1:
            mismatched += 1
            continue
        nu = info[0][0]
        keep.append(k)
        freqs.append(nu)
        triples.append([np.angle(s[nu]) % (2 * np.pi) for s in slots])
        fits.append([1.0 - share for _, share, _ in info])
    triples = np.array(triples, dtype=np.float64).reshape(-1, 3)
    resid = wrap_phase(triples[:, 0] + triples[:, 1] - triples[:, 2]) if len(triples) else np.zeros(0)
    return PhaseReport(np.array(keep, dtype=np.int64), triples, np.array(freqs, dtype=np.int64),
                       resid, np.array(fits).reshape(-1, 3), degenerate, mismatched)


def preactivation_map(params: NetworkParams, layer: int, index: int):
    """h1_k(n, m) (layer 1) or h2_q(n, m) (layer 2) on the full grid.

    Returns ``(grid, fourier)``, both p x p with grid[n, m]; ``fourier`` is
    |fft2(grid)| with axis 0 the frequency along n.
    """
    p, N = params.p, params.N
    if layer == 1:
        if not 0 <= index < N:
            raise ConfigError(f"hidden index {index} out of range for N={N}")
    elif layer == 2:
        if not 0 <= index < p:
            raise ConfigError(f"output index {index} out of range for p={p}")
    else:
        raise ConfigError("layer must be 1 or 2")
    c1, c2 = params.scales()
    if layer == 1:
        w = params.W1[index]
        grid = c1 * (w[:p][:, None] + w[p:][None, :])
    else:
        grid = np.empty((p, p))
        for n in range(p):
            h1 = c1 * (params.W1[:, n][None, :] + params.W1[:, p:].T)   # (m, N)
            grid[n] = c2 * (activate(params.activation, h1) @ params.W2[index])
    return grid, np.abs(np.fft.fft2(grid))


def line_masks(p: int, target: int = 0):
    """Boolean masks over the p x p Fourier grid for the four interference lines.

    ``sum``: a = b (functions of n + m), ``diff``: a = -b (functions of n - m),
    ``n_only``: b = 0, ``m_only``: a = 0.  The DC bin is excluded everywhere.
    ``target`` only documents which q the map belongs to; the line geometry
    is independent of it.
    """
    a = np.arange(p)[:, None]
    b = np.arange(p)[None, :]
    dc = (a == 0) & (b == 0)
    return {
        "sum": ((a - b) % p == 0) & ~dc,
        "diff": ((a + b) % p == 0) & ~dc,
        "n_only": (b == 0) & ~dc,
        "m_only": (a == 0) & ~dc,
    }


def output_grid(params: NetworkParams, chunk: int = 4096) -> np.ndarray:
    """h2 for every (n, m): array of shape (p, p, p) indexed [n, m, q]."""
    p = params.p
    c1, c2 = params.scales()
    out = np.empty((p * p, p))
    n, m = np.divmod(np.arange(p * p), p)
    for s in range(0, p * p, chunk):
        h1 = c1 * (params.W1[:, n[s:s + chunk]] + params.W1[:, p + m[s:s + chunk]]).T
        out[s:s + chunk] = c2 * (activate(params.activation, h1) @ params.W2.T)
    return out.reshape(p, p, p)


def interference_ratio(params: NetworkParams, task: ModularTask) -> float:
    """max |h2_q| over off-target (n, m, q) divided by the mean on-target h2."""
    if params.p != task.p:
        raise ConfigError("task and network moduli differ")
    h2 = output_grid(params).reshape(task.p**2, task.p)
    targets = task.table().reshape(-1)
    rows = np.arange(len(targets))
    on = h2[rows, targets]
    off = h2.copy()
    off[rows, targets] = 0.0
    return float(np.max(np.abs(off)) / np.mean(on))


def interference_ratio_from_output(h2: np.ndarray, targets: np.ndarray) -> float:
    rows = np.arange(len(targets))
    on = h2[rows, targets]
    off = np.abs(h2).copy()
    off[rows, targets] = 0.0
    return float(np.max(off) / np.mean(on))


SPECTRUM_COLUMNS = ("neuron", "freq_1", "freq_2", "phase_1", "phase_2", "fit_residual_1",
                    "fit_residual_2", "ipr_1", "ipr_2")
PHASE_COLUMNS = ("neuron", "freq", "phi_1", "phi_2", "phi_3", "residual")


def write_spectra_csv(params: NetworkParams, path) -> Path:
    """One row per neuron with dominant bins, phases, fit residuals and IPR_1, IPR_2."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SPECTRUM_COLUMNS)
        for k in range(params.N):
            prof = weight_spectrum(params, k)
            w.writerow([k, *prof.dominant_freq, *map(repr, prof.extracted_phase),
                        *map(repr, prof.fit_residual), repr(prof.ipr[1]), repr(prof.ipr[2])])
    return path


def write_phases_csv(report: PhaseReport, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PHASE_COLUMNS)
        for k, nu, tri, res in zip(report.neurons, report.frequencies, report.phases, report.residuals):
            w.writerow([int(k), int(nu), *map(repr, map(float, tri)), repr(float(res))])
    return path


def write_map_csv(grid: np.ndarray, path, **header) -> Path:
    """Matrix as CSV preceded by a one-line JSON header (e.g. p, layer, index)."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(grid):
            w.writerow([repr(float(v)) for v in row])
    return path


def read_map_csv(path):
    """Inverse of :func:`write_map_csv`: returns ``(grid, header)``."""
    with open(path, newline="") as fh:
        header = json.loads(fh.readline())
        grid = np.array([[float(v) for v in row] for row in csv.reader(fh) if row])
    return grid, header
