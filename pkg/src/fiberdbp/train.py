"""Data-driven fitting of the enhanced-sub-step intensity filter.

The coefficients are chosen to make the (few-step) enhanced backpropagation
output match the output of a fine-step conventional backpropagation of the
same received waveform, in the normalized mean-square-error sense. The
optimizer is a damped Gauss-Newton iteration: the coefficients enter the
model only through a phase that is linear in them, so the least-squares
normal equations built from a first-order model converge in a few steps;
candidate steps are halved until the error decreases, which makes
acceptance monotone by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sigkit import DualPolSignal, EssfmCoefficients
from .dbp import DbpConfig, backpropagate


def _as_stack(sig) -> np.ndarray:
    if isinstance(sig, DualPolSignal):
        return sig.stack()
    arr = np.asarray(sig)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    return arr


def mse(a, b) -> float:
    """Normalized mean square error mean(|a - b|^2) / mean(|b|^2).

    Accepts DualPolSignal or plain complex arrays of matching shape; for
    dual-pol inputs both polarizations contribute.
    """
    sa, sb = _as_stack(a), _as_stack(b)
    if sa.shape != sb.shape:
        raise ValueError(f"shape mismatch: {sa.shape} vs {sb.shape}")
    denom = np.mean(np.abs(sb) ** 2)
    if denom == 0.0:
        raise ValueError("reference is identically zero")
    return float(np.mean(np.abs(sa - sb) ** 2) / denom)


@dataclass(frozen=True)
class TrainConfig:
    """Settings of the coefficient fit.

    ``target_steps_per_span`` controls the fine conventional backpropagation
    used as the fitting target. ``train_samples`` is the length of the
    received-signal prefix used for the fit; it must comfortably
    overdetermine the unknowns.
    """

    n_coeffs: int = 32             # side coefficients Nc; Nc+1 unknowns total
    target_steps_per_span: int = 4
    train_samples: int = 16384
    max_iterations: int = 30
    tolerance: float = 1e-9        # relative error improvement to declare convergence
    rng_seed: int = 0              # reserved; the fit itself is deterministic

    def __post_init__(self):
        if self.n_coeffs < 0:
            raise ValueError("n_coeffs must be >= 0")
        if self.target_steps_per_span < 1:
            raise ValueError("target_steps_per_span must be >= 1")
        if self.train_samples < 10 * (self.n_coeffs + 1):
            raise ValueError("train_samples must be at least 10x the unknown count")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.tolerance > 0.0):
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class TrainResult:
    coefficients: EssfmCoefficients
    final_mse: float
    initial_mse: float
    converged: bool
    iterations: int


def optimize_coefficients(
    received: DualPolSignal,
    dbp_cfg: DbpConfig,
    train_cfg: TrainConfig,
) -> TrainResult:
    """Fit enhanced-sub-step coefficients on a received waveform.

    The geometry (overlap plan, link, step count, sub-step order) is taken
    from ``dbp_cfg``; its algorithm and any attached coefficients are
    ignored. Starting from c = (1, 0, ..., 0), each Gauss-Newton step is
    accepted only if it lowers the error, so the returned coefficients never
    do worse than the plain-sub-step start. Deterministic for fixed inputs.

    Returns
    -------
    TrainResult
        Best coefficients found, their error against the fine-step target,
        the starting error, a convergence flag (False only when the
        iteration budget ran out while still improving) and the number of
        accepted iterations.
    """
    n_train = min(train_cfg.train_samples, len(received))
    prefix = DualPolSignal(received.x[:n_train], received.y[:n_train], received.sample_rate)

    target_cfg = DbpConfig(
        "ssfm",
        dbp_cfg.plan,
        dbp_cfg.link,
        num_steps=train_cfg.target_steps_per_span * dbp_cfg.link.num_spans,
        arrangement=dbp_cfg.arrangement,
    )
    target = backpropagate(prefix, target_cfg).stack()

    # the prefix is processed as circular, so keep the wraparound-affected
    # edges out of the fitting window
    edge = dbp_cfg.plan.overlap // 2
    if n_train <= 4 * edge:
        edge = 0
    window = slice(edge, n_train - edge if edge else n_train)
    t_win = target[:, window]
    norm = np.sum(np.abs(t_win) ** 2)
    if norm == 0.0:
        raise ValueError("fine-step target is identically zero on the fit window")

    def run(c: np.ndarray) -> np.ndarray:
        cfg = DbpConfig(
            "essfm",
            dbp_cfg.plan,
            dbp_cfg.link,
            num_steps=dbp_cfg.num_steps,
            coeffs=EssfmCoefficients(c),
            arrangement=dbp_cfg.arrangement,
        )
        return backpropagate(prefix, cfg).stack()

    def residual(c: np.ndarray) -> np.ndarray:
        d = (run(c) - target)[:, window] / np.sqrt(norm)
        return np.concatenate([d.real.ravel(), d.imag.ravel()])

    c = EssfmCoefficients.identity(train_cfg.n_coeffs).c.copy()
    r = residual(c)
    err = float(r @ r)
    initial_err = err

    fd_step = 1e-6
    converged = False
    iterations = 0
    for _ in range(train_cfg.max_iterations):
        jac = np.empty((r.size, c.size))
        for i in range(c.size):
            cp = c.copy()
            cp[i] += fd_step
            jac[:, i] = (residual(cp) - r) / fd_step
        step, *_ = np.linalg.lstsq(jac, -r, rcond=None)

        scale = 1.0
        accepted = False
        while scale >= 1e-8:
            cand = c + scale * step
            r_cand = residual(cand)
            err_cand = float(r_cand @ r_cand)
            if err_cand < err:
                improvement = (err - err_cand) / err
                c, r, err = cand, r_cand, err_cand
                iterations += 1
                accepted = True
                if improvement < train_cfg.tolerance:
                    converged = True
                break
            scale *= 0.5
        if not accepted:
            converged = True  # no descent direction left
            break
        if converged:
            break

    return TrainResult(
        coefficients=EssfmCoefficients(c),
        final_mse=err,
        initial_mse=initial_err,
        converged=converged,
        iterations=iterations,
    )


def save_coefficients(path, coeffs: EssfmCoefficients):
    """Write coefficients as text: first line Nc, then c_0 .. c_Nc one per
    line as decimal floats."""
    lines = [str(coeffs.n_coeffs)]
    lines += [repr(float(v)) for v in coeffs.c]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_coefficients(path) -> EssfmCoefficients:
    """Read a coefficient file produced by save_coefficients."""
    with open(path) as fh:
        raw = [ln.strip() for ln in fh if ln.strip()]
    if not raw:
        raise ValueError(f"{path}: empty coefficient file")
    try:
        n_c = int(raw[0])
    except ValueError as exc:
        raise ValueError(f"{path}: first line must be the side-coefficient count") from exc
    values = raw[1:]
    if len(values) != n_c + 1:
        raise ValueError(f"{path}: expected {n_c + 1} coefficients, found {len(values)}")
    try:
        c = np.array([float(v) for v in values])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed coefficient value") from exc
    return EssfmCoefficients(c)
