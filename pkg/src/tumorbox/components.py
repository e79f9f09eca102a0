"""Connected-component labeling on binary masks.

Classic two-pass algorithm with union-find over provisional labels; supports
4- and 8-connectivity. Components come back sorted largest first.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class Component:
    """One connected group of set pixels.

    pixels is an (area, 2) array of (row, col) coordinates in row-major scan
    order; centroid is the real-valued (row, col) mean.
    """

    pixels: np.ndarray
    centroid: tuple[float, float]
    label_class: int | None = None

    @property
    def area(self) -> int:
        return self.pixels.shape[0]

    @property
    def anchor(self) -> tuple[int, int]:
        """Topmost-leftmost pixel, used as a deterministic tie-breaker."""
        return (int(self.pixels[0, 0]), int(self.pixels[0, 1]))


class _UnionFind:
    def __init__(self):
        self.parent = [0]  # label 0 unused

    def make(self) -> int:
        self.parent.append(len(self.parent))
        return len(self.parent) - 1

    def find(self, a: int) -> int:
        parent = self.parent
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the smaller root so final labels stay in scan order
            if ra < rb:
                self.parent[rb] = ra
            else:
                self.parent[ra] = rb


def connected_components(mask, connectivity: int = 8, label_class: int | None = None) -> list[Component]:
    """Partition the set pixels of ``mask`` into maximal connected groups.

    Returns components sorted by area descending, ties broken by the smaller
    (row, col) of the topmost-leftmost pixel. An empty mask gives an empty
    list.
    """
    if connectivity not in (4, 8):
        raise ValidationError(f"connectivity must be 4 or 8, got {connectivity}")
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValidationError(f"mask must be 2-D, got shape {mask.shape}")
    height, width = mask.shape

    if connectivity == 4:
        neighbors = ((-1, 0), (0, -1))
    else:
        neighbors = ((-1, -1), (-1, 0), (-1, 1), (0, -1))

    labels = np.zeros((height, width), dtype=np.int32)
    uf = _UnionFind()
    for i in range(height):
        row = mask[i]
        for j in range(width):
            if not row[j]:
                continue
            seen = []
            for di, dj in neighbors:
                ni, nj = i + di, j + dj
                if 0 <= ni < height and 0 <= nj < width and labels[ni, nj]:
                    seen.append(labels[ni, nj])
            if not seen:
                labels[i, j] = uf.make()
            else:
                current = min(uf.find(lab) for lab in seen)
                labels[i, j] = current
                for lab in seen:
                    uf.union(current, lab)

    groups: dict[int, list[tuple[int, int]]] = {}
    for i in range(height):
        for j in range(width):
            if labels[i, j]:
                root = uf.find(labels[i, j])
                groups.setdefault(root, []).append((i, j))

    comps = []
    for pixels in groups.values():
        arr = np.asarray(pixels, dtype=np.int64)
        centroid = (float(arr[:, 0].mean()), float(arr[:, 1].mean()))
        comps.append(Component(pixels=arr, centroid=centroid, label_class=label_class))
    comps.sort(key=lambda c: (-c.area, c.anchor))
    return comps
