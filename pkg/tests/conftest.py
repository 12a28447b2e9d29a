import numpy as np
import pytest

from starvox import fibonacci_rays, ray_system_from_vectors


@pytest.fixture(scope="session")
def rays96():
    return fibonacci_rays(96)


@pytest.fixture(scope="session")
def rays32():
    return fibonacci_rays(32)


@pytest.fixture(scope="session")
def octahedron_rays():
    return ray_system_from_vectors(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
    )


def brute_force_edt_probability(labels: np.ndarray) -> np.ndarray:
    """All-pairs EDT oracle: for each foreground voxel, the distance to the
    nearest voxel not holding the same label, normalized per instance."""
    coords = np.argwhere(labels >= 0).astype(np.float64)
    flat = labels.ravel()
    out = np.zeros(labels.shape, np.float64)
    for lab in np.unique(flat):
        if lab == 0:
            continue
        inside = coords[flat == lab]
        outside = coords[flat != lab]
        d = np.sqrt(((inside[:, None, :] - outside[None, :, :]) ** 2).sum(-1)).min(1)
        vals = d / d.max()
        for (z, y, x), v in zip(inside.astype(int), vals):
            out[z, y, x] = v
    return out


def brute_force_march(labels: np.ndarray, z, y, x, ray_zyx) -> float:
    """Unit-step nearest-neighbor marching oracle for one voxel and ray."""
    lab = labels[z, y, x]
    t = 0
    while True:
        t += 1
        pz = int(np.floor(z + t * ray_zyx[0] + 0.5))
        py = int(np.floor(y + t * ray_zyx[1] + 0.5))
        px = int(np.floor(x + t * ray_zyx[2] + 0.5))
        if not (0 <= pz < labels.shape[0] and 0 <= py < labels.shape[1] and 0 <= px < labels.shape[2]):
            return float(t)
        if labels[pz, py, px] != lab:
            return float(t)


def brute_force_max_matching(entries: dict, tau: float) -> int:
    """Exhaustive maximum matching restricted to pairs with IoU >= tau."""
    admissible = [(g, p) for (g, p), v in entries.items() if v >= tau]
    gts = sorted({g for g, _ in admissible})
    best = 0

    def recurse(i, used_preds, count):
        nonlocal best
        best = max(best, count)
        if i == len(gts):
            return
        remaining = len(gts) - i
        if count + remaining <= best:
            return
        g = gts[i]
        for gg, p in admissible:
            if gg == g and p not in used_preds:
                recurse(i + 1, used_preds | {p}, count + 1)
        recurse(i + 1, used_preds, count)

    recurse(0, frozenset(), 0)
    return best
