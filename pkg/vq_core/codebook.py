from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import NDArray

from utils.errors import NonFiniteError, VolumeFormatError
from volume_core.types import frozen_array
from volume_core.volume_io import decode_payload, read_container, write_container


class InitKind(str, Enum):
    Random = "random"
    KMeans = "kmeans"


class CodebookName(str, Enum):
    Vanilla = "vanilla"
    Hierarchical = "hierarchical"
    Collaborative = "collaborative"


@dataclass(frozen=True)
class Codebook:
    codes: NDArray[np.float64]
    init_kind: InitKind = InitKind.Random
    name: CodebookName = CodebookName.Vanilla

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.float64)
        if codes.ndim != 2 or codes.shape[0] < 1 or codes.shape[1] < 1:
            raise ValueError(f"codebook must be a non-empty K x C array, got shape {codes.shape}")
        if not np.all(np.isfinite(codes)):
            raise NonFiniteError(f"{self.name} codebook contains non-finite values")
        object.__setattr__(self, "codes", frozen_array(codes))
        object.__setattr__(self, "init_kind", InitKind(self.init_kind))
        object.__setattr__(self, "name", CodebookName(self.name))

    @property
    def K(self) -> int:
        return int(self.codes.shape[0])

    @property
    def C(self) -> int:
        return int(self.codes.shape[1])

    @classmethod
    def random(cls, K: int, C: int, *, seed: int = 0, name: CodebookName = CodebookName.Vanilla) -> "Codebook":
        """Uniform in [-1/K, 1/K]."""
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-1.0 / K, 1.0 / K, size=(K, C)), InitKind.Random, name)


def save_codebook(path, codebook: Codebook):
    header = {"kind": "codebook", "K": codebook.K, "C": codebook.C,
              "init_kind": codebook.init_kind.value, "name": codebook.name.value, "dtype": "f64"}
    write_container(path, header, codebook.codes, order="row-major")


def load_codebook(path) -> Codebook:
    header, payload = read_container(path)
    if header.get("kind") != "codebook":
        raise VolumeFormatError(f"{path}: not a codebook file (kind={header.get('kind')})")
    try:
        K, C = int(header["K"]), int(header["C"])
        init_kind, name = InitKind(header["init_kind"]), CodebookName(header["name"])
    except (KeyError, ValueError) as exc:
        raise VolumeFormatError(f"{path}: malformed codebook header: {exc}") from exc
    codes = decode_payload(header, payload, (K, C), path)
    return Codebook(codes, init_kind, name)
