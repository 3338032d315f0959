"""Low-rank Fourier reconstruction of residual images.

Convention: unnormalized forward DFT, 1/(W*H) inverse (numpy's default).
Frequencies are ranked by radius in cycles per image, so a mask is a
discrete low-pass disk that is closed under conjugation.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import as_image


def _signed(idx: np.ndarray, n: int) -> np.ndarray:
    return np.where(idx > n // 2, idx - n, idx)


@dataclass(frozen=True)
class FrequencyMask:
    width: int
    height: int
    k: int
    kept: frozenset  # of (u, v): u indexes width, v indexes height

    @property
    def size(self) -> int:
        return len(self.kept)

    @property
    def bins(self) -> np.ndarray:
        """Kept bins as an (n, 2) array of (u, v), sorted."""
        return np.array(sorted(self.kept), dtype=np.int64).reshape(-1, 2)

    def array(self) -> np.ndarray:
        """Boolean (height, width) array in numpy FFT layout."""
        return _mask_array(self.width, self.height, self.k)


@lru_cache(maxsize=32)
def _ranked_bins(width: int, height: int) -> np.ndarray:
    v, u = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    u, v = u.ravel(), v.ravel()
    su, sv = _signed(u, width), _signed(v, height)
    r = np.sqrt(su.astype(np.float64) ** 2 + sv.astype(np.float64) ** 2)
    order = np.lexsort((v, u, sv * sv, su * su, r))
    return np.stack([u[order], v[order]], axis=1)


def build_mask(width: int, height: int, k: int) -> FrequencyMask:
    """The ``k`` lowest radial frequencies plus their conjugate partners."""
    if width < 1 or height < 1:
        raise ValueError("mask size must be positive")
    if not 1 <= k <= width * height:
        raise ValueError(f"k={k} must lie in [1, {width * height}]")
    top = _ranked_bins(width, height)[:k]
    kept = set(map(tuple, top.tolist()))
    kept |= {((-u) % width, (-v) % height) for u, v in kept}
    return FrequencyMask(width, height, k, frozenset(kept))


@lru_cache(maxsize=32)
def _mask_array(width: int, height: int, k: int) -> np.ndarray:
    m = np.zeros((height, width), dtype=bool)
    bins = build_mask(width, height, k).bins
    m[bins[:, 1], bins[:, 0]] = True
    m.setflags(write=False)
    return m


def _check_dims(img: np.ndarray, mask: FrequencyMask):
    if img.shape[:2] != (mask.height, mask.width):
        raise ValueError(f"image {img.shape[1]}x{img.shape[0]} does not match mask "
                         f"{mask.width}x{mask.height}")


def lowpass_complex(R, mask: FrequencyMask) -> np.ndarray:
    """Masked reconstruction before the imaginary part is discarded."""
    R = as_image(R)
    _check_dims(R, mask)
    F = np.fft.fft2(R, axes=(0, 1))
    F *= mask.array()[:, :, None]
    return np.fft.ifft2(F, axes=(0, 1))


def lowpass_reconstruct(R, mask: FrequencyMask) -> np.ndarray:
    """Keep only the masked frequencies of each channel of ``R``."""
    return np.ascontiguousarray(lowpass_complex(R, mask).real)


class SpectralCoefficients:
    """Per-frame, per-channel complex coefficients on the kept bins.

    Storage is one real parameter vector per frame and channel: real and
    imaginary parts for one representative of each conjugate pair, real part
    only for self-conjugate bins.  Reconstructions are therefore exactly
    real.
    """

    def __init__(self, mask: FrequencyMask, n_frames: int, params=None):
        self.mask = mask
        bins = mask.bins
        w, h = mask.width, mask.height
        conj = np.stack([(-bins[:, 0]) % w, (-bins[:, 1]) % h], axis=1)
        lookup = {tuple(b): i for i, b in enumerate(bins.tolist())}
        partner = np.array([lookup[tuple(c)] for c in conj.tolist()])
        rep = np.flatnonzero(np.arange(len(bins)) <= partner)
        self_conj = partner[rep] == rep
        self.bins = bins
        self._partner = partner
        self._rep = rep
        self._self_conj = self_conj
        n_params = int(np.sum(np.where(self_conj, 1, 2)))
        self.n_frames = int(n_frames)
        if params is None:
            params = np.zeros((self.n_frames, 3, n_params))
        params = np.array(params, dtype=np.float64)
        if params.shape != (self.n_frames, 3, n_params):
            raise ValueError(f"params shape {params.shape} != {(self.n_frames, 3, n_params)}")
        self.params = params
        # column layout inside a parameter vector
        self._re_col = np.cumsum(np.where(self_conj, 1, 2)) - np.where(self_conj, 1, 2)
        self._im_col = np.where(self_conj, -1, self._re_col + 1)

    @property
    def n_params(self) -> int:
        return self.params.shape[2]

    def values(self, frame: int) -> np.ndarray:
        """Complex (3, n_kept) coefficients for ``frame`` in ``bins`` order."""
        self._check_frame(frame)
        p = self.params[frame]
        out = np.zeros((3, len(self.bins)), dtype=np.complex128)
        re = p[:, self._re_col]
        im = np.where(self._self_conj, 0.0, p[:, np.maximum(self._im_col, 0)])
        out[:, self._rep] = re + 1j * im
        out[:, self._partner[self._rep]] = re - 1j * im
        return out

    def set_values(self, frame: int, values):
        """Set from complex (3, n_kept) values; assumes conjugate symmetry."""
        self._check_frame(frame)
        v = np.asarray(values)[:, self._rep]
        self.params[frame][:, self._re_col] = v.real
        pair = ~self._self_conj
        self.params[frame][:, self._im_col[pair]] = v.imag[:, pair]

    def _check_frame(self, frame):
        if not 0 <= frame < self.n_frames:
            raise IndexError(f"frame {frame} out of range [0, {self.n_frames})")

    def spectrum(self, frame: int) -> np.ndarray:
        F = np.zeros((self.mask.height, self.mask.width, 3), dtype=np.complex128)
        F[self.bins[:, 1], self.bins[:, 0], :] = self.values(frame).T
        return F

    def param_gradient(self, grad_image) -> np.ndarray:
        """Gradient of ``<grad_image, reconstruct(...)>`` w.r.t. one frame's params."""
        G = np.fft.fft2(np.asarray(grad_image, dtype=np.float64), axes=(0, 1))
        Gk = G[self.bins[:, 1], self.bins[:, 0], :].T[:, self._rep]
        scale = np.where(self._self_conj, 1.0, 2.0) / (self.mask.width * self.mask.height)
        out = np.zeros((3, self.n_params))
        out[:, self._re_col] = Gk.real * scale
        pair = ~self._self_conj
        out[:, self._im_col[pair]] = (Gk.imag * scale)[:, pair]
        return out

    @classmethod
    def from_images(cls, images, mask: FrequencyMask) -> "SpectralCoefficients":
        """Coefficients whose reconstruction equals the low-pass of each image."""
        coeffs = cls(mask, len(images))
        for f, img in enumerate(images):
            img = as_image(img)
            _check_dims(img, mask)
            F = np.fft.fft2(img, axes=(0, 1))
            coeffs.set_values(f, F[coeffs.bins[:, 1], coeffs.bins[:, 0], :].T)
        return coeffs

    def copy(self) -> "SpectralCoefficients":
        return SpectralCoefficients(self.mask, self.n_frames, self.params.copy())


def reconstruct_from_coefficients(coeffs: SpectralCoefficients, frame: int, width: int, height: int) -> np.ndarray:
    """Inverse DFT of one frame's sparse coefficient set."""
    if (width, height) != (coeffs.mask.width, coeffs.mask.height):
        raise ValueError("coefficient mask does not match the requested size")
    return np.ascontiguousarray(np.fft.ifft2(coeffs.spectrum(frame), axes=(0, 1)).real)
