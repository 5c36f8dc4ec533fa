"""Ideal and star-coupler discrete Fourier transforms.

A star coupler maps N input waveguides onto M output waveguides through a slab
region bounded by two confocal circles of radius R.  Placing the waveguides at
sin(theta_n) = n * sqrt(lambda_slab / (N R)) makes the coupling matrix
approximate a centered unitary DFT.  Coupling coefficients are computed here by
Gauss-Legendre quadrature of the scalar diffraction overlap integrals.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np


class OpticsError(ValueError):
    """Invalid size, infeasible geometry or bad matrix arguments."""


class GeometryInfeasible(OpticsError):
    pass


class ParaxialWarning(UserWarning):
    pass


class QuadratureError(ArithmeticError):
    """Successive quadrature refinements disagree by more than the tolerance."""

    def __init__(self, coarse: np.ndarray, fine: np.ndarray, tol: float):
        self.coarse = coarse
        self.fine = fine
        self.tol = tol
        err = float(np.max(np.abs(fine - coarse)))
        super().__init__(f"quadrature not converged: max |fine - coarse| = {err:.3e} > {tol:.1e}")


@dataclass(frozen=True)
class CenteredIndexRange:
    size: int

    def __post_init__(self):
        if self.size < 1:
            raise OpticsError(f"invalid size {self.size}: must be >= 1")

    @property
    def offset(self) -> int:
        # -N/2 for even N, -(N-1)/2 for odd N
        return -(self.size // 2)

    def indices(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.size)


def centered_indices(n: int) -> np.ndarray:
    return CenteredIndexRange(n).indices()


@dataclass(frozen=True)
class TransferMatrix:
    entries: np.ndarray
    provenance: Literal["ideal", "star_coupler"] = "ideal"
    geometry: "StarCouplerGeometry | None" = None
    global_phase_removed: bool = False

    def __post_init__(self):
        self.entries.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def ideal_dft(n: int, inverse: bool = False) -> TransferMatrix:
    """Unitary centered DFT, entries exp(-+ 2 pi i n m / N) / sqrt(N)."""
    idx = centered_indices(n)
    sign = 1.0 if inverse else -1.0
    # reduce n*m mod N in integers before scaling so large N keeps full accuracy
    nm = np.mod(np.outer(idx, idx), n)
    entries = np.exp(sign * 2j * np.pi * nm / n) / math.sqrt(n)
    return TransferMatrix(entries, "ideal", None, True)


def ideal_pool(n: int, m: int) -> TransferMatrix:
    """Rows of ideal_dft(n) for the m centered (low-frequency) output indices."""
    if not 1 <= m <= n:
        raise OpticsError(f"pool size {m} must lie in [1, {n}]")
    rows = centered_indices(m) - CenteredIndexRange(n).offset
    entries = np.array(ideal_dft(n).entries[rows, :])
    return TransferMatrix(entries, "ideal", None, True)


@dataclass(frozen=True)
class StarCouplerGeometry:
    """Physical star-coupler layout.  Lengths in meters, angles in radians.

    ``pitch_ports`` is the port count that sets the angular pitch
    sqrt(lambda_slab / (pitch_ports * R)); it equals ``inputs`` for the usual
    N x M coupler, so a pooling coupler keeps the N-port pitch on its M outputs.
    """

    wavelength: float
    slab_index: float
    mode_width: float
    radius: float
    inputs: int
    outputs: int
    paraxial_limit_deg: float = 15.0
    strict: bool = False

    def __post_init__(self):
        for name in ("wavelength", "slab_index", "mode_width", "radius"):
            if not getattr(self, name) > 0:
                raise OpticsError(f"{name} must be positive")
        if self.inputs < 1 or self.outputs < 1:
            raise OpticsError("port counts must be >= 1")
        if not self.mode_width / self.radius < 1e-2:
            raise GeometryInfeasible(
                f"mode width / radius = {self.mode_width / self.radius:.3g}, need < 1e-2")

    @property
    def slab_wavelength(self) -> float:
        return self.wavelength / self.slab_index

    @property
    def slab_wavenumber(self) -> float:
        return 2 * math.pi * self.slab_index / self.wavelength

    @property
    def input_angles(self) -> np.ndarray:
        return waveguide_angles(self.inputs, self.radius, self.slab_wavelength,
                                self.paraxial_limit_deg, self.strict)

    @property
    def output_angles(self) -> np.ndarray:
        return waveguide_angles(self.outputs, self.radius, self.slab_wavelength,
                                self.paraxial_limit_deg, self.strict,
                                pitch_ports=self.inputs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_edge_angle(cls, n: int, theta_edge: float, wavelength: float, slab_index: float,
                        mode_width: float, outputs: int | None = None, **kw) -> "StarCouplerGeometry":
        """Geometry whose outermost input port sits at ``theta_edge``."""
        radius = radius_for_edge_angle(n, theta_edge, wavelength / slab_index)
        return cls(wavelength, slab_index, mode_width, radius, n,
                   n if outputs is None else outputs, **kw)


def waveguide_angles(n: int, radius: float, slab_wavelength: float,
                     paraxial_limit_deg: float = 15.0, strict: bool = False,
                     pitch_ports: int | None = None) -> np.ndarray:
    """Port angles theta_k = asin(k * sqrt(lambda_slab / (P R))) over centered k.

    P is ``pitch_ports`` (defaults to ``n``).  Raises GeometryInfeasible when an
    arcsine argument exceeds 1.  Angles beyond the paraxial limit warn, or raise
    when ``strict``.
    """
    p = n if pitch_ports is None else pitch_ports
    s = centered_indices(n) * math.sqrt(slab_wavelength / (p * radius))
    worst = float(np.max(np.abs(s)))
    if worst > 1:
        raise GeometryInfeasible(f"arcsine argument {worst:.4g} > 1; radius too small")
    theta = np.arcsin(s)
    edge = math.degrees(float(np.max(np.abs(theta))))
    if edge > paraxial_limit_deg + 1e-9:
        msg = f"edge port angle {edge:.3f} deg exceeds paraxial limit {paraxial_limit_deg} deg"
        if strict:
            raise GeometryInfeasible(msg)
        warnings.warn(msg, ParaxialWarning, stacklevel=2)
    return theta


def radius_for_edge_angle(n: int, theta_edge: float, slab_wavelength: float) -> float:
    """R = |n0|^2 lambda_slab / (N sin^2 theta_edge)."""
    n0 = CenteredIndexRange(n).offset
    s = math.sin(theta_edge)
    if s == 0:
        raise OpticsError("edge angle must be nonzero")
    return n0 * n0 * slab_wavelength / (n * s * s)


def normalized_radius(theta_edge: float, slab_wavelength: float) -> float:
    """N-independent radius lambda_slab / sin^2 theta_edge; R ~ (N/4) R_norm."""
    return slab_wavelength / math.sin(theta_edge) ** 2


@dataclass(frozen=True)
class QuadratureSpec:
    points: int = 64
    panels: int = 1
    window_widths: float = 5.0
    tol: float = 1e-8
    check: bool = True

    def __post_init__(self):
        if self.points < 2 or self.panels < 1 or self.window_widths <= 0 or self.tol <= 0:
            raise OpticsError(f"invalid quadrature spec {self}")

    def nodes(self, half_width: float) -> tuple[np.ndarray, np.ndarray]:
        """Composite Gauss-Legendre nodes/weights on [-half_width, half_width]."""
        x, w = np.polynomial.legendre.leggauss(self.points)
        edges = np.linspace(-half_width, half_width, self.panels + 1)
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * (edges[1:] - edges[:-1])
        t = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        wt = (half[:, None] * w[None, :]).ravel()
        return t, wt

    def refined(self) -> "QuadratureSpec":
        return QuadratureSpec(self.points, 2 * self.panels, self.window_widths, self.tol, False)


def mode_profile(offset_angle: np.ndarray, radius: float, mode_width: float) -> np.ndarray:
    """Power-normalized Gaussian mode in angle: int |phi|^2 R dtheta = 1."""
    return (2.0 / (math.pi * mode_width**2)) ** 0.25 * np.exp(-(radius * offset_angle / mode_width) ** 2)


def _coupling(geom: StarCouplerGeometry, quad: QuadratureSpec, chunk: int = 32) -> np.ndarray:
    r, w = geom.radius, geom.mode_width
    k = geom.slab_wavenumber
    th_in = geom.input_angles
    th_out = geom.output_angles
    t, wt = quad.nodes(quad.window_widths * w / r)
    phi_w = wt * mode_profile(t, r, w) * r           # (Q,)

    # emitted field sampled at each output port centre, integrated over the input mode
    ang = th_in[None, :] + t[:, None]                 # (Q, N)
    s_in = np.sin(ang)
    amp_in = phi_w[:, None] * np.cos(ang)             # obliquity factor
    kr = k * r
    prefactor = np.exp(1j * kr) / np.sqrt(1j * geom.slab_wavelength * r)
    field = np.empty((len(th_out), len(th_in)), dtype=complex)
    s_out = np.sin(th_out)
    for lo in range(0, len(th_out), chunk):
        so = s_out[lo:lo + chunk]
        phase = np.exp(-1j * kr * so[:, None, None] * s_in[None, :, :])   # (c, Q, N)
        field[lo:lo + chunk] = np.einsum("cqn,qn->cn", phase, amp_in)
    field *= prefactor

    # overlap with the receiving mode, wavefront tilt set by the source angle
    overlap = phi_w @ np.exp(-1j * kr * t[:, None] * np.sin(th_in)[None, :])   # (N,)
    return field * overlap[None, :]


def coupling_matrix(geom: StarCouplerGeometry, quad: QuadratureSpec | None = None) -> TransferMatrix:
    """M x N star-coupler field coupling matrix by Gauss-Legendre quadrature.

    The global phase is divided out so the centre entry is real and positive.
    With ``quad.check`` the quadrature is repeated on twice as many panels and a
    QuadratureError is raised if any entry moves by more than ``quad.tol``.
    """
    quad = quad or QuadratureSpec()
    kappa = _coupling(geom, quad)
    if quad.check:
        fine = _coupling(geom, quad.refined())
        if np.max(np.abs(fine - kappa)) > quad.tol:
            raise QuadratureError(kappa, fine, quad.tol)
        kappa = fine
    centre = kappa[geom.outputs // 2, geom.inputs // 2]
    kappa = kappa * (abs(centre) / centre)
    return TransferMatrix(kappa, "star_coupler", geom, True)


def _square(m: TransferMatrix | np.ndarray) -> np.ndarray:
    a = np.asarray(m)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise OpticsError(f"expected a square matrix, got shape {a.shape}")
    return a


def fidelity(candidate: TransferMatrix | np.ndarray, reference: TransferMatrix | np.ndarray) -> float:
    """|Tr(C'^H F) / N|^2 with C' = C / (||C||_F / sqrt(N)).

    Scaling by ||C||_F / sqrt(N) rather than ||C||_F makes a unitary match score 1.
    """
    c, f = _square(candidate), _square(reference)
    if c.shape != f.shape:
        raise OpticsError(f"shape mismatch {c.shape} vs {f.shape}")
    n = c.shape[0]
    norm = np.linalg.norm(c)
    if norm == 0:
        raise OpticsError("candidate has zero Frobenius norm")
    overlap = np.vdot(c, f) * math.sqrt(n) / norm / n
    return float(min(abs(overlap) ** 2, 1.0))


def transmission(m: TransferMatrix | np.ndarray) -> float:
    """Tr(C^H C) / N, the mean column power."""
    a = _square(m)
    return float(np.sum(np.abs(a) ** 2) / a.shape[0])


def column_powers(m: TransferMatrix | np.ndarray) -> np.ndarray:
    return np.sum(np.abs(np.asarray(m)) ** 2, axis=0)


@dataclass(frozen=True)
class TradeoffRow:
    theta_deg: float
    R_m: float
    R_norm_m: float
    F: float
    T: float


def tradeoff_sweep(n: int, theta_range_deg: tuple[float, float], steps: int,
                   wavelength: float = 1550e-9, slab_index: float = 2.85,
                   mode_width: float = 500e-9, quad: QuadratureSpec | None = None) -> list[TradeoffRow]:
    lo, hi = theta_range_deg
    if not (0 < lo <= hi <= 15.0):
        raise OpticsError(f"theta range {theta_range_deg} must lie within (0, 15] deg")
    ref = ideal_dft(n)
    rows = []
    for deg in np.linspace(lo, hi, steps):
        theta = math.radians(deg)
        geom = StarCouplerGeometry.from_edge_angle(n, theta, wavelength, slab_index, mode_width)
        kappa = coupling_matrix(geom, quad)
        rows.append(TradeoffRow(float(deg), geom.radius,
                                normalized_radius(theta, geom.slab_wavelength),
                                fidelity(kappa, ref), transmission(kappa)))
    return rows


@dataclass(frozen=True)
class FootprintModel:
    """MZI cell size and star-coupler normalized radius (meters)."""

    mzi_width: float = 100e-6
    mzi_height: float = 60e-6
    normalized_radius: float = 10e-6
    slab_wavelength: float = 1550e-9 / 2.85
    margin: float = 0.0


@dataclass(frozen=True)
class FootprintReport:
    n: int
    mzi_count: int
    mzi_area: float
    star_radius: float
    star_length: float
    star_width: float
    star_area: float
    ratio: float


def footprint_compare(n: int, model: FootprintModel = FootprintModel()) -> FootprintReport:
    """FFT-mesh MZI area versus one star-coupler DFT of the same size.

    The slab between the two confocal arcs is R long and 2 R sin(theta_edge)
    wide, with R = (N/4) R_norm; ``margin`` pads each side.
    """
    if n < 2 or n & (n - 1):
        raise OpticsError(f"N={n}: the FFT mesh count needs N to be a power of two")
    count = n * int(math.log2(n)) // 2
    mzi_area = count * model.mzi_width * model.mzi_height
    radius = n / 4 * model.normalized_radius
    sin_edge = math.sqrt(model.slab_wavelength / model.normalized_radius)
    length = radius + 2 * model.margin
    width = 2 * radius * sin_edge + 2 * model.margin
    area = length * width
    return FootprintReport(n, count, mzi_area, radius, length, width, area, mzi_area / area)


# Matrix file layout: 8-byte magic b"PCNNMAT1", uint64 rows, uint64 cols (little-endian),
# then rows*cols complex entries in C order as interleaved little-endian float64 (re, im).
MATRIX_MAGIC = b"PCNNMAT1"


def save_matrix(path, m: TransferMatrix | np.ndarray) -> None:
    a = np.asarray(m, dtype=complex)
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(np.array(a.shape, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(a).astype("<c16").tobytes())


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MATRIX_MAGIC:
        raise OpticsError(f"{path}: not a matrix file (bad magic)")
    rows, cols = np.frombuffer(data, "<u8", 2, 8)
    n = int(rows) * int(cols)
    if len(data) != 24 + 16 * n:
        raise OpticsError(f"{path}: expected {24 + 16 * n} bytes, found {len(data)}")
    return np.frombuffer(data, "<c16", n, 24).reshape(int(rows), int(cols)).astype(complex)
