"""
Workspace - 정사각 격자 작업공간과 4방향 인접 그래프

- 정점 번호: 좌하단(bottom-left)에서 시작하는 row-major, 1..N_g
- 좌표는 생성 시 한 번만 계산해 보관
"""
from dataclasses import dataclass
from typing import FrozenSet, Sequence, Tuple

import numpy as np


class GridError(ValueError):
    """잘못된 격자 파라미터"""


class InvalidVertexError(ValueError):
    """존재하지 않는 정점 id"""


class InvalidPathError(ValueError):
    """인접하지 않은 정점을 잇는 경로"""


@dataclass(frozen=True)
class GridWorld:
    """[-w, w]^2 격자 + 4-way 인접 그래프 (생성 후 불변)"""
    half_width: float
    side_count: int
    spacing: float
    coords: np.ndarray                              # (N_g, 2), row = vertex-1
    adjacency: Tuple[FrozenSet[int], ...]           # index = vertex-1

    @property
    def num_vertices(self) -> int:
        return self.side_count * self.side_count

    @property
    def vertices(self) -> range:
        return range(1, self.num_vertices + 1)

    def validate_vertex(self, v: int) -> int:
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or not 1 <= int(v) <= self.num_vertices:
            raise InvalidVertexError(f"정점 id 범위 밖: {v} (1..{self.num_vertices})")
        return int(v)

    def coord(self, v: int) -> np.ndarray:
        return self.coords[self.validate_vertex(v) - 1]

    def row_col(self, v: int) -> Tuple[int, int]:
        v = self.validate_vertex(v)
        return divmod(v - 1, self.side_count)

    def vertex_at(self, row: int, col: int) -> int:
        return row * self.side_count + col + 1

    def nearest_vertex(self, x: Sequence[float]) -> int:
        """좌표에 가장 가까운 격자점"""
        col = int(round((float(x[0]) + self.half_width) / self.spacing))
        row = int(round((float(x[1]) + self.half_width) / self.spacing))
        col = min(max(col, 0), self.side_count - 1)
        row = min(max(row, 0), self.side_count - 1)
        return self.vertex_at(row, col)

    def manhattan(self, u: int, v: int) -> int:
        """격자 hop 단위 맨해튼 거리"""
        ru, cu = self.row_col(u)
        rv, cv = self.row_col(v)
        return abs(ru - rv) + abs(cu - cv)

    def contains(self, x: Sequence[float], tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(np.asarray(x, dtype=float)) <= self.half_width + tol))


def build_grid(half_width: float, side_count: int) -> GridWorld:
    """격자 생성 (row-major, 좌하단 = 1, 우상단 = N_g)"""
    if isinstance(side_count, bool) or int(side_count) != side_count or side_count < 2:
        raise GridError(f"side_count는 2 이상의 정수여야 합니다: {side_count}")
    if not half_width > 0:
        raise GridError(f"half_width는 양수여야 합니다: {half_width}")
    n = int(side_count)
    spacing = 2.0 * half_width / (n - 1)

    axis = -half_width + spacing * np.arange(n)
    axis[-1] = half_width
    ys, xs = np.meshgrid(axis, axis, indexing="ij")
    coords = np.column_stack([xs.ravel(), ys.ravel()])
    coords.setflags(write=False)

    adjacency = []
    for v in range(1, n * n + 1):
        row, col = divmod(v - 1, n)
        nbrs = set()
        if row > 0:
            nbrs.add(v - n)
        if row < n - 1:
            nbrs.add(v + n)
        if col > 0:
            nbrs.add(v - 1)
        if col < n - 1:
            nbrs.add(v + 1)
        adjacency.append(frozenset(nbrs))

    return GridWorld(half_width=float(half_width), side_count=n, spacing=spacing,
                     coords=coords, adjacency=tuple(adjacency))


def neighbors(g: GridWorld, v: int) -> FrozenSet[int]:
    """상하좌우 인접 정점"""
    return g.adjacency[g.validate_vertex(v) - 1]


@dataclass(frozen=True)
class Path:
    """정점 열 (i_0, ..., i_L); 연속 정점은 인접해야 함, 재방문 허용"""
    vertices: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(int(v) for v in self.vertices))

    @property
    def length(self) -> int:
        """간선 수 L"""
        return len(self.vertices) - 1

    @property
    def start(self) -> int:
        return self.vertices[0]

    @property
    def end(self) -> int:
        return self.vertices[-1]

    def validate(self, g: GridWorld, min_length: int = 1) -> "Path":
        if len(self.vertices) < min_length + 1:
            raise InvalidPathError(f"경로 길이 부족: L={self.length} (< {min_length})")
        for v in self.vertices:
            g.validate_vertex(v)
        for a, b in zip(self.vertices, self.vertices[1:]):
            if b not in g.adjacency[a - 1]:
                raise InvalidPathError(f"인접하지 않은 정점 연결: {a} -> {b}")
        return self

    def concat(self, other: "Path") -> "Path":
        """self의 끝 정점 = other의 시작 정점일 때 이어 붙이기"""
        if other.vertices and self.vertices and other.start != self.end:
            raise InvalidPathError(f"이어 붙일 수 없음: {self.end} != {other.start}")
        return Path(self.vertices + other.vertices[1:])

    def suffix(self, index: int) -> "Path":
        return Path(self.vertices[index:])

    def __len__(self) -> int:
        return len(self.vertices)

    def __iter__(self):
        return iter(self.vertices)

