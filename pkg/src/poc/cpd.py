"""Change point detection for data selection, plus alternative weighting schemes.

The default detector is a multivariate CUSUM-type mean-shift statistic with
permutation calibration, searched by binary segmentation that keeps only the
rightmost significant split (downstream needs only the start of the latest
stationary segment). A random-forest two-sample detector is available behind
the same interface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyHistory

MEAN_SHIFT = "MeanShift"
CLASSIFIER_GAIN = "ClassifierGain"


@dataclass
class DetectorConfig:
    method: str = MEAN_SHIFT
    alpha_sig: float = 0.05
    permutations: int = 199
    min_segment: int = 5
    seed: int = 0

    def validate(self):
        if not 0 < self.alpha_sig < 1:
            raise ValueError("alpha_sig must lie in (0, 1)")
        if self.permutations < 19:
            raise ValueError("permutations must be >= 19")
        if self.min_segment < 2:
            raise ValueError("min_segment must be >= 2")
        if self.method not in (MEAN_SHIFT, CLASSIFIER_GAIN):
            raise ValueError(f"unknown method {self.method!r}")
        return self


@dataclass
class SelectionScheme:
    """How past observations are weighted when estimating the objective."""

    scheme: str = "CPD"  # "CPD" | "EMA" | "Window"
    ema_factor: float = 0.9
    window: int = 20

    def validate(self):
        if self.scheme not in ("CPD", "EMA", "Window"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0 < self.ema_factor < 1:
            raise ValueError("ema_factor must lie in (0, 1)")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        return self


def _as_matrix(series):
    X = np.asarray(series, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _cusum_stats(X):
    """CUSUM statistic at every split k in [1, s): scaled between-mean distance."""
    s = X.shape[0]
    cs = np.cumsum(X, axis=0)
    k = np.arange(1, s)[:, None]
    mean_l = cs[:-1] / k
    mean_r = (cs[-1] - cs[:-1]) / (s - k)
    scale = np.sqrt(k[:, 0] * (s - k[:, 0]) / s)
    return scale * np.linalg.norm(mean_l - mean_r, axis=1)


def _mean_shift_split(X, min_segment, permutations, rng):
    """Best split index and permutation p-value for a mean shift in X."""
    s = X.shape[0]
    if s < 2 * min_segment:
        return None, 1.0
    stats = _cusum_stats(X)
    valid = slice(min_segment - 1, s - min_segment)
    rel = stats[valid]
    k = int(np.argmax(rel)) + min_segment  # split: X[:k] vs X[k:]
    obs = rel.max()
    # Vectorized permutation null of the max statistic.
    order = np.argsort(rng.random((permutations, s)), axis=1)
    perm = X[order]  # (P, s, d)
    cs = np.cumsum(perm, axis=1)
    kk = np.arange(1, s)[None, :, None]
    mean_l = cs[:, :-1] / kk
    mean_r = (cs[:, -1:] - cs[:, :-1]) / (s - kk)
    scale = np.sqrt(kk[:, :, 0] * (s - kk[:, :, 0]) / s)
    perm_stats = (scale * np.linalg.norm(mean_l - mean_r, axis=2))[:, valid].max(axis=1)
    p = (1 + np.sum(perm_stats >= obs)) / (permutations + 1)
    return k, p


def _classifier_gain_split(X, min_segment, permutations, rng):
    """Two-sample random-forest gain over a coarse split grid."""
    from sklearn.ensemble import RandomForestClassifier

    s = X.shape[0]
    if s < 2 * min_segment:
        return None, 1.0
    grid = np.unique(np.linspace(min_segment, s - min_segment, num=min(8, s), dtype=int))

    def gain(data, k):
        y = (np.arange(s) >= k).astype(int)
        clf = RandomForestClassifier(
            n_estimators=50, max_depth=4,
            random_state=int(rng.integers(2**31)),
        )
        clf.fit(data, y)
        acc = clf.score(data, y)
        return acc - max(k, s - k) / s

    gains = [gain(X, k) for k in grid]
    best = int(np.argmax(gains))
    obs = gains[best]
    null = []
    for _ in range(permutations):
        Xp = X[rng.permutation(s)]
        null.append(max(gain(Xp, k) for k in grid))
    p = (1 + np.sum(np.asarray(null) >= obs)) / (permutations + 1)
    return int(grid[best]), p


def _split_fn(config):
    return (_mean_shift_split if config.method == MEAN_SHIFT
            else _classifier_gain_split)


def _rightmost_significant(X, config, rng):
    """Binary segmentation keeping only the rightmost significant split."""
    split = _split_fn(config)
    offset = 0
    found = None
    while True:
        k, p = split(X[offset:], config.min_segment, config.permutations, rng)
        if k is None or p > config.alpha_sig:
            return found
        found = offset + k
        offset = found


def latest_change_point(series, config: DetectorConfig) -> int:
    """Start index of the most recent stationary segment; 0 if none found."""
    config.validate()
    X = _as_matrix(series)
    rng = np.random.default_rng([config.seed, X.shape[0]])
    cp = _rightmost_significant(X, config, rng)
    return 0 if cp is None else int(cp)


def detect_significant_change(series, config: DetectorConfig, prev_cp: int,
                              distance_threshold: float):
    """New change point if significant and farther than distance_threshold
    from the previous one; otherwise None."""
    if distance_threshold < 0:
        raise ValueError("distance_threshold must be >= 0")
    config.validate()
    X = _as_matrix(series)
    rng = np.random.default_rng([config.seed, X.shape[0]])
    cp = _rightmost_significant(X, config, rng)
    if cp is None:
        return None
    if abs(cp - prev_cp) <= distance_threshold:
        return None
    return int(cp)


def select_estimation_weights(scheme: SelectionScheme, history_len: int,
                              iota: int) -> np.ndarray:
    """Weights over c_1..c_{t-1} (indices 0..history_len-1), summing to 1."""
    scheme.validate()
    if history_len == 0:
        raise EmptyHistory("no observations before the first period")
    if not 0 <= iota < history_len:
        raise ValueError(f"iota {iota} outside [0, {history_len})")
    w = np.zeros(history_len)
    if scheme.scheme == "CPD":
        w[iota:] = 1.0 / (history_len - iota)
    elif scheme.scheme == "EMA":
        f = scheme.ema_factor
        w = f ** np.arange(history_len - 1, -1, -1, dtype=float)
        w /= w.sum()
    else:  # Window
        k = min(scheme.window, history_len)
        w[history_len - k:] = 1.0 / k
    return w
