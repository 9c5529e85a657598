import json
from pathlib import Path
from typing import Iterator, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from btrfly.core.exceptions import OutOfBounds
from btrfly.core.taxonomy import VertebraLabel, label_from_index, label_from_name
from btrfly.schemas.volume import GeometryLike, Triple, Volume


class AnnotationEntry(BaseModel):
    """Schema for one serialized centroid: {label, position_mm[, confidence]}"""
    label: str = Field(..., description="Vertebra name, C1..S2")
    position_mm: Triple
    confidence: Optional[float] = Field(None, description="Fused channel maximum, predictions only")

    @field_validator("label")
    @classmethod
    def _known_label(cls, value: str) -> str:
        return label_from_name(value).name


class AnnotationSet(BaseModel):
    """Labelled vertebral centroids in mm; partial depending on the field of view"""
    model_config = ConfigDict(frozen=True)

    entries: dict[VertebraLabel, Triple] = Field(default_factory=dict)
    confidences: dict[VertebraLabel, float] = Field(default_factory=dict)

    @field_validator("entries", "confidences", mode="before")
    @classmethod
    def _coerce_labels(cls, value: dict) -> dict:
        coerced = {}
        for key, item in dict(value).items():
            label = label_from_name(key) if isinstance(key, str) else label_from_index(key)
            coerced[label] = item
        return coerced

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[VertebraLabel]:
        return iter(sorted(self.entries))

    def __contains__(self, label: VertebraLabel) -> bool:
        return label in self.entries

    @property
    def labels(self) -> list[VertebraLabel]:
        return sorted(self.entries)

    def position(self, label: VertebraLabel) -> Triple:
        return self.entries[label]

    def check_within(self, volume: GeometryLike) -> None:
        """
        Raises:
            OutOfBounds: a centroid lies outside the volume's physical extent
        """
        geometry = volume.geometry if isinstance(volume, Volume) else volume
        extent = geometry.extent_mm
        for label, position in self.entries.items():
            for p, lo, hi, s in zip(position, volume.origin, extent, volume.spacing):
                if p < lo - s / 2 or p > hi + s / 2:
                    raise OutOfBounds(f"{label.name} at {position} mm lies outside the volume")

    def to_entries(self) -> list[AnnotationEntry]:
        return [
            AnnotationEntry(
                label=label.name,
                position_mm=self.entries[label],
                confidence=self.confidences.get(label),
            )
            for label in self.labels
        ]

    @classmethod
    def from_entries(cls, entries: list[AnnotationEntry]) -> "AnnotationSet":
        positions: dict[VertebraLabel, Triple] = {}
        confidences: dict[VertebraLabel, float] = {}
        for entry in entries:
            label = label_from_name(entry.label)
            if label in positions:
                raise ValueError(f"duplicate centroid for {label.name}")
            positions[label] = tuple(entry.position_mm)
            if entry.confidence is not None:
                confidences[label] = entry.confidence
        return cls(entries=positions, confidences=confidences)

    def save(self, path: Path) -> None:
        payload = [entry.model_dump(exclude_none=True) for entry in self.to_entries()]
        Path(path).write_text(json.dumps(payload, indent=2))

    @classmethod
    def load(cls, path: Path) -> "AnnotationSet":
        raw = json.loads(Path(path).read_text())
        return cls.from_entries([AnnotationEntry.model_validate(item) for item in raw])
