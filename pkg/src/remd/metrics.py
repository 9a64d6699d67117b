"""Evaluation metrics for super-resolved fields."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from remd.field import FluidMask, ScalarField, VectorField2D, check_same_grid
from remd.spectral import RadialSpectrum, radial_error_spectrum, radial_power_spectrum
from remd.stencils import divergence, vorticity

SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03
REPORT_COLUMNS = ("rmse", "psnr", "ssim", "ve", "ee", "ged", "div_l2",
                  "data_range", "steps_used", "wall_seconds")


def rmse(pred: ScalarField, gt: ScalarField, mask: FluidMask | None = None) -> float:
    grid = check_same_grid(pred, gt)
    d2 = (pred.values - gt.values) ** 2
    if mask is None:
        return float(np.sqrt(np.mean(d2)))
    check_same_grid(gt, mask)
    n = mask.values.sum()
    if n == 0:
        raise ValueError(f"mask on {grid} has no fluid cells")
    return float(np.sqrt(np.sum(d2 * mask.values) / n))


def data_range_of(gt: ScalarField) -> float:
    return float(gt.values.max() - gt.values.min())


def psnr_from_rmse(err: float, data_range: float) -> float:
    if data_range <= 0:
        raise ValueError("data_range must be positive")
    if err == 0:
        return math.inf
    return 20.0 * math.log10(data_range / err)


def psnr(pred: ScalarField, gt: ScalarField, data_range: float | None = None,
         mask: FluidMask | None = None) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the fields agree exactly."""
    if data_range is None:
        data_range = data_range_of(gt)
    return psnr_from_rmse(rmse(pred, gt, mask), data_range)


def ssim_terms(pred: ScalarField, gt: ScalarField, data_range: float | None = None):
    """Per-window luminance and contrast-structure factors of SSIM.

    Window statistics use uniform 7x7 weights and population (1/N)
    moments over every fully contained window. A constant ``gt`` falls
    back to a unit data range.
    """
    check_same_grid(pred, gt)
    ny, nx = gt.grid.shape
    if ny < SSIM_WINDOW or nx < SSIM_WINDOW:
        raise ValueError(f"grid {nx}x{ny} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    if data_range is None:
        data_range = data_range_of(gt) or 1.0
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    x, y = pred.values, gt.values

    def wmean(a):
        return sliding_window_view(a, (SSIM_WINDOW, SSIM_WINDOW)).mean(axis=(-2, -1))

    mx, my = wmean(x), wmean(y)
    vx = wmean(x * x) - mx * mx
    vy = wmean(y * y) - my * my
    cxy = wmean(x * y) - mx * my
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    cs = (2 * cxy + c2) / (vx + vy + c2)
    return lum, cs


def ssim(pred: ScalarField, gt: ScalarField, data_range: float | None = None) -> float:
    """Mean SSIM over all fully contained 7x7 windows."""
    lum, cs = ssim_terms(pred, gt, data_range)
    return float((lum * cs).mean())


def _masked_mean(a, mask: FluidMask | None):
    if mask is None:
        return float(np.mean(a))
    n = mask.values.sum()
    if n == 0:
        raise ValueError("mask has no fluid cells")
    return float(np.sum(a * mask.values) / n)


def enstrophy(w: VectorField2D, mask: FluidMask | None = None) -> float:
    om = vorticity(w).values
    return 0.5 * _masked_mean(om * om, mask)


def vorticity_error(pred: VectorField2D, gt: VectorField2D,
                    mask: FluidMask | None = None) -> tuple[float, float]:
    """Mean-squared vorticity difference and absolute enstrophy difference.

    With ``mask`` both means run over fluid cells only.
    """
    check_same_grid(pred.u, gt.u)
    d = vorticity(pred).values - vorticity(gt).values
    return _masked_mean(d * d, mask), abs(enstrophy(pred, mask) - enstrophy(gt, mask))


def energy_discrepancy(pred: ScalarField, gt: ScalarField, nbins: int | None = None) -> float:
    """Relative L1 distance between radial power spectra, normalised by the reference."""
    check_same_grid(pred, gt)
    ep = radial_power_spectrum(pred, nbins).power
    eg = radial_power_spectrum(gt, nbins).power
    total = eg.sum()
    if total <= 0:
        raise ValueError("reference field has zero spectral energy")
    return float(np.abs(ep - eg).sum() / total)


def divergence_l2(w: VectorField2D) -> float:
    """Root-mean-square of the stencil divergence."""
    d = divergence(w).values
    return float(np.sqrt(np.mean(d * d)))


@dataclass
class EvalReport:
    rmse: float
    psnr: float
    ssim: float
    ve: float
    ee: float
    ged: float
    div_l2: float
    data_range: float
    error_spectrum: RadialSpectrum = dc_field(repr=False)
    steps_used: int = 0
    wall_seconds: float = 0.0

    def row(self) -> dict:
        d = asdict(self)
        d.pop("error_spectrum")
        return {k: d[k] for k in REPORT_COLUMNS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in self.row().items()})
        return buf.getvalue()

    def spectrum_csv(self) -> str:
        return spectrum_to_csv(self.error_spectrum)


def spectrum_to_csv(s: RadialSpectrum) -> str:
    lines = ["k,power,count"]
    lines += [f"{float(k)!r},{float(p)!r},{int(c)}" for k, p, c in zip(s.k, s.power, s.counts)]
    return "\n".join(lines) + "\n"


def evaluate(pred: ScalarField, gt: ScalarField, pred_vec: VectorField2D | None = None,
             gt_vec: VectorField2D | None = None, nbins: int | None = None,
             data_range: float | None = None, mask: FluidMask | None = None,
             steps_used: int = 0, wall_seconds: float = 0.0) -> EvalReport:
    """Fill a full report; vector metrics are NaN unless both vector fields are given."""
    if data_range is None:
        data_range = data_range_of(gt) or 1.0
    err = rmse(pred, gt, mask)
    ve = ee = dv = math.nan
    if pred_vec is not None and gt_vec is not None:
        ve, ee = vorticity_error(pred_vec, gt_vec, mask)
        dv = divergence_l2(pred_vec)
    return EvalReport(
        rmse=err,
        psnr=psnr_from_rmse(err, data_range),
        ssim=ssim(pred, gt, data_range),
        ve=ve, ee=ee,
        ged=energy_discrepancy(pred, gt, nbins),
        div_l2=dv,
        data_range=data_range,
        error_spectrum=radial_error_spectrum(pred, gt, nbins),
        steps_used=steps_used,
        wall_seconds=wall_seconds,
    )
