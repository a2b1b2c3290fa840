"""Registry of sensor modalities: the single source of truth for channel
counts and native sizes used by embedders, decoders, and the data generator.

Five modalities ship builtin; anything else can be registered at runtime or
through the run config. gsd_meters and corpus_count are inert metadata kept
for reports; desk-scale runs never materialize the real corpora.
"""

from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class ModalitySpec:
    id: str
    channels: int
    native_size: int
    gsd_meters: float = 0.0
    corpus_count: int = 0

    def validate(self) -> None:
        if not self.id:
            raise ValueError("modality id must be non-empty")
        if self.channels < 1:
            raise ValueError(f"modality {self.id!r}: channels must be >= 1, got {self.channels}")
        if self.native_size < 16:
            raise ValueError(
                f"modality {self.id!r}: native_size must be >= 16, got {self.native_size}"
            )


def builtin_modalities() -> list[ModalitySpec]:
    """The five builtin sensors, in canonical order."""
    return [
        ModalitySpec("sentinel1", channels=2, native_size=512, gsd_meters=5.0, corpus_count=4_642_353),
        ModalitySpec("sentinel2", channels=9, native_size=512, gsd_meters=10.0, corpus_count=977_774),
        ModalitySpec("gaofen", channels=4, native_size=512, gsd_meters=4.0, corpus_count=117_450),
        ModalitySpec("naip", channels=3, native_size=512, gsd_meters=1.0, corpus_count=2_332_351),
        ModalitySpec("enmap", channels=224, native_size=128, gsd_meters=30.0, corpus_count=11_483),
    ]


BUILTIN_IDS = tuple(spec.id for spec in builtin_modalities())


class ModalityRegistry:
    """Id-keyed ModalitySpec store; built once, then read-only."""

    def __init__(self, specs: list[ModalitySpec] | None = None):
        self._specs: dict[str, ModalitySpec] = {}
        for spec in specs if specs is not None else builtin_modalities():
            self.register(spec)

    def register(self, spec: ModalitySpec) -> "ModalityRegistry":
        spec.validate()
        if spec.id in self._specs:
            raise ValueError(f"modality {spec.id!r} already registered")
        self._specs[spec.id] = spec
        return self

    def lookup(self, modality_id: str) -> ModalitySpec:
        try:
            return self._specs[modality_id]
        except KeyError:
            raise KeyError(
                f"unknown modality {modality_id!r}; registered: {sorted(self._specs)}"
            ) from None

    def __contains__(self, modality_id: str) -> bool:
        return modality_id in self._specs

    def ids(self) -> list[str]:
        return list(self._specs)

    def corpus_count(self, modality_id: str) -> int:
        return self.lookup(modality_id).corpus_count


def default_registry() -> ModalityRegistry:
    return ModalityRegistry()


def with_native_size(spec: ModalitySpec, size: int) -> ModalitySpec:
    """Desk-scale override: keep channels authentic, swap the image size."""
    out = replace(spec, native_size=size)
    out.validate()
    return out
