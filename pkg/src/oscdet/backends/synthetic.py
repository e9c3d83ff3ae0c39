"""Deterministic stand-in backend for tests and demos.

One designated channel responds to bright disc patterns: its feature map is
the normalized cross-correlation between the grayscale input and a soft disc
template, evaluated on the same coarse grid a conv layer would produce. All
other channels carry low uniform noise seeded by the image content, so runs
are reproducible without any model file.

Where a window hangs off the image it is padded with the overlap's mean
intensity. That keeps normalization over the full window (a pattern must
match the whole template, not a lucky corner of it) without inventing
contrast at the border the way zero padding would.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

from .base import BackendDescriptor, FeatureMaps, check_input


def _integral(a: np.ndarray) -> np.ndarray:
    """Summed-area table with a zero first row and column."""
    out = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    np.cumsum(np.cumsum(a, axis=0), axis=1, out=out[1:, 1:])
    return out


def _rect_sum(s: np.ndarray, y0, y1, x0, x1):
    """Rectangle sums from a summed-area table; bounds may be index arrays."""
    return (
        s[np.ix_(y1, x1)] - s[np.ix_(y0, x1)] - s[np.ix_(y1, x0)] + s[np.ix_(y0, x0)]
        if isinstance(y0, np.ndarray)
        else s[y1, x1] - s[y0, x1] - s[y1, x0] + s[y0, x0]
    )


def _fast_len(n: int) -> int:
    """Smallest 5-smooth integer >= n, a decent FFT size."""
    best = 1 << n.bit_length()
    p2 = 1
    while p2 < 2 * n:
        p3 = p2
        while p3 < 2 * n:
            p5 = p3
            while p5 < n:
                p5 *= 5
            if n <= p5 < best:
                best = p5
            p3 *= 3
        p2 *= 2
    return best


class SyntheticBackend:
    def __init__(
        self,
        seed: int = 0,
        planted_channel: int = 57,
        channel_count: int = 256,
        input_side: int = 227,
        grid_size: int = 13,
        template_ratio: float = 1.0,
        soft_edge: float = 0.22,
        noise_scale: float = 0.1,
        score_gain: float = 10.0,
        score_mid: float = 0.58,
        coverage_power: float = 0.5,
        response_knee: float = 0.6,
    ):
        if not 0 <= planted_channel < channel_count:
            raise ValueError(
                f"planted channel {planted_channel} out of range 0..{channel_count - 1}"
            )
        if not 0 < template_ratio <= 1.0:
            raise ValueError(f"template_ratio must be in (0, 1], got {template_ratio}")
        if not 0 < response_knee <= 1.0:
            raise ValueError(f"response_knee must be in (0, 1], got {response_knee}")
        self.seed = seed
        self.planted_channel = planted_channel
        self.channel_count = channel_count
        self.grid_size = grid_size
        self.noise_scale = noise_scale
        self.score_gain = score_gain
        self.score_mid = score_mid
        self.coverage_power = coverage_power
        self.response_knee = response_knee
        self.descriptor = BackendDescriptor(
            input_side=input_side,
            feature_layer="features",
            class_count=2,
            concurrency_safe=True,
        )
        side = input_side
        center = (side - 1) / 2.0
        r1 = template_ratio * side / 2.0
        r0 = r1 * (1.0 - soft_edge)
        y, x = np.mgrid[0:side, 0:side]
        d = np.hypot(x - center, y - center)
        t = np.zeros((side, side))
        t[d <= r0] = 1.0
        band = (d > r0) & (d < r1)
        t[band] = 0.5 * (1.0 + np.cos(np.pi * (d[band] - r0) / (r1 - r0)))
        self._template = t
        self._t_total = float(t.sum())
        self._t_mean = float(t.mean())
        self._t_sigma = float(t.std())
        self._t1 = _integral(t)
        # template window top-left offsets, one per coarse grid cell
        centers = (np.arange(grid_size) + 0.5) * side / grid_size - 0.5
        half = (side - 1) // 2
        self._offsets = np.rint(centers).astype(int) - half
        # per-axis window bounds on the image and on the template; the same
        # arrays serve rows and columns because everything here is square
        self._i0 = np.maximum(0, self._offsets)
        self._i1 = np.minimum(side, self._offsets + side)
        self._fft_n = _fast_len(side + int(np.abs(self._offsets).max()))
        self._t_fft = np.conj(np.fft.rfft2(t, (self._fft_n, self._fft_n)))
        self._n_ov = np.outer(self._i1 - self._i0, self._i1 - self._i0).astype(float)
        self._cov_shrink = (self._n_ov / (side * side)) ** self.coverage_power
        self._t_pad = self._t_total - _rect_sum(
            self._t1, self._i0 - self._offsets, self._i1 - self._offsets,
            self._i0 - self._offsets, self._i1 - self._offsets,
        )

    def _ncc_map(self, gray: np.ndarray) -> np.ndarray:
        """Template correlation at each coarse grid position, clamped to [0, 1]."""
        return self._ncc_batch(gray[np.newaxis])[0]

    def _ncc_batch(self, grays: np.ndarray, cells: np.ndarray | None = None) -> np.ndarray:
        """Correlation maps for a stack of grayscale images.

        cells restricts evaluation to those grid rows/columns; the result is
        len(cells) square per image.
        """
        side = self.descriptor.input_side
        n = float(side * side)
        if cells is None:
            cells = np.arange(self.grid_size)
        pick = np.ix_(cells, cells)
        i0, i1 = self._i0[cells], self._i1[cells]
        offs = self._offsets[cells]
        n_ov = self._n_ov[pick]
        t = self._template
        k = grays.shape[0]
        if len(cells) <= 3:
            # a handful of cells: per-window sums and dots beat building
            # summed-area tables and a full transform
            s1 = np.empty((k, len(cells), len(cells)))
            s2 = np.empty_like(s1)
            dot = np.empty_like(s1)
            for a in range(len(cells)):
                iy0, iy1 = i0[a], i1[a]
                ty = iy0 - offs[a]
                for b in range(len(cells)):
                    ix0, ix1 = i0[b], i1[b]
                    tx = ix0 - offs[b]
                    win = grays[:, iy0:iy1, ix0:ix1]
                    s1[:, a, b] = np.einsum("kij->k", win)
                    s2[:, a, b] = np.einsum("kij,kij->k", win, win)
                    dot[:, a, b] = np.einsum(
                        "kij,ij->k", win, t[ty:ty + iy1 - iy0, tx:tx + ix1 - ix0]
                    )
        else:
            moments = np.stack((grays, grays * grays), axis=1)
            np.cumsum(moments, axis=2, out=moments)
            np.cumsum(moments, axis=3, out=moments)
            sat = np.zeros((k, 2, side + 1, side + 1))
            sat[:, :, 1:, 1:] = moments
            idx = lambda y, x: sat[:, :, y[:, np.newaxis], x[np.newaxis, :]]
            rect = idx(i1, i1) - idx(i0, i1) - idx(i1, i0) + idx(i0, i0)
            s1, s2 = rect[:, 0], rect[:, 1]
            # one circular cross-correlation yields the template dot at
            # every grid offset; the transform is padded far enough that
            # no window within the offset range wraps around
            m = self._fft_n
            spec = np.fft.rfft2(grays, (m, m), axes=(1, 2))
            spec *= self._t_fft
            corr = np.fft.irfft2(spec, (m, m), axes=(1, 2))
            o = offs % m
            dot = corr[:, o[:, np.newaxis], o[np.newaxis, :]]
        mp = s1 / n_ov
        # padded pixels equal mp, so the window mean is mp and the window
        # variance is the overlap variance shrunk by n_ov/n
        vp = (s2 / n_ov - mp * mp) * (n_ov / n)
        cov = (dot + mp * self._t_pad[pick]) / n - self._t_mean * mp
        with np.errstate(divide="ignore", invalid="ignore"):
            ncc = cov / (self._t_sigma * np.sqrt(vp))
        # extra coverage shrink: a pattern seen through a sliver of the
        # window should not outscore one seen in full; flat windows score 0
        out = np.where(vp > 1e-12, ncc * self._cov_shrink[pick], 0.0)
        return np.clip(out, 0.0, 1.0)

    _GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114]) / 255.0

    def _gray(self, image: np.ndarray) -> np.ndarray:
        img = check_input(image, self.descriptor.input_side)
        return img @ self._GRAY_WEIGHTS

    def infer_features(self, image: np.ndarray) -> FeatureMaps:
        img = check_input(image, self.descriptor.input_side)
        digest = hashlib.blake2b(
            img.tobytes() + self.seed.to_bytes(8, "little", signed=True),
            digest_size=8,
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        g = self.grid_size
        maps = rng.uniform(0.0, self.noise_scale, (self.channel_count, g, g))
        # the channel saturates at the knee: a matched filter peaks in a
        # narrow cone, but the heat blob must fill a pattern-sized window
        # for the proposal stage, so mid-strength matches plateau at 1
        raw = self._ncc_map(self._gray(img))
        maps[self.planted_channel] = np.clip(raw / self.response_knee, 0.0, 1.0)
        return FeatureMaps(maps)

    def infer_class_scores(self, images: Sequence[np.ndarray]) -> list[float]:
        """Logistic of the best near-center correlation.

        Only the 3x3 cells around the grid center count: a crop should be
        judged by how well it frames the pattern, so correlation recovered
        far off-center (a pattern half outside the crop) must not rescue it.
        """
        c = self.grid_size // 2
        lo, hi = max(0, c - 1), c + 2
        side = self.descriptor.input_side
        grays = np.empty((len(images), side, side))
        for i, image in enumerate(images):
            try:
                grays[i] = self._gray(image)
            except ValueError as e:
                raise ValueError(f"batch item {i}: {e}") from e
        cells = np.arange(lo, hi)
        scores: list[float] = []
        for start in range(0, len(images), 32):
            maps = self._ncc_batch(grays[start:start + 32], cells)
            peaks = maps.max(axis=(1, 2))
            logistic = 1.0 / (1.0 + np.exp(-self.score_gain * (peaks - self.score_mid)))
            scores.extend(float(s) for s in logistic)
        return scores
