"""Concept embedding tables.

File format: one line per concept, ``<cui> <dim space-separated decimals>``.
Concepts missing from the table get a deterministic pseudo-random vector
derived from the concept id alone, scaled to norm 0.1, so runs are
reproducible without shipping a full embedding file.
"""

import numpy as np
from importlib import resources

from .errors import DataError
from .rng import derive_rng

DEFAULT_DIM = 200
FALLBACK_NORM = 0.1


class EmbeddingTable:
    def __init__(self, dim: int = DEFAULT_DIM, vectors: dict | None = None):
        self.dim = int(dim)
        self.vectors = {}
        for cui, vec in (vectors or {}).items():
            self._insert(cui, vec)

    def _insert(self, cui: str, vec):
        arr = np.asarray(vec, dtype=np.float64)
        if arr.shape != (self.dim,):
            raise DataError(f"embedding for {cui} has length {arr.shape}, "
                            f"expected ({self.dim},)")
        self.vectors[cui] = arr

    def __contains__(self, cui: str) -> bool:
        return cui in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def vector(self, cui: str) -> np.ndarray:
        """Stored vector, or the deterministic fallback for unknown ids."""
        vec = self.vectors.get(cui)
        if vec is None:
            vec = fallback_vector(cui, self.dim)
        return vec

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        table = None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts or parts[0].startswith("#"):
                    continue
                cui, values = parts[0], parts[1:]
                try:
                    vec = [float(v) for v in values]
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: bad number ({exc})") from None
                if table is None:
                    table = cls(dim=len(vec))
                if cui in table.vectors:
                    raise DataError(f"{path}:{lineno}: duplicate embedding for {cui}")
                table._insert(cui, vec)
        return table if table is not None else cls()

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for cui in sorted(self.vectors):
                values = " ".join(repr(float(v)) for v in self.vectors[cui])
                fh.write(f"{cui} {values}\n")


def fallback_vector(cui: str, dim: int) -> np.ndarray:
    rng = derive_rng(0, "embedding-fallback", cui, dim)
    v = rng.standard_normal(dim)
    return v * (FALLBACK_NORM / np.linalg.norm(v))


def bundled_embeddings_path():
    """Path to the miniature embedding table shipped with the package."""
    return resources.files("report_kg").joinpath("data", "mini_embeddings.txt")


def load_bundled_embeddings() -> EmbeddingTable:
    with resources.as_file(bundled_embeddings_path()) as p:
        return EmbeddingTable.load(p)
