"""Labeled instance assembly, CSV persistence, background sampling.

The on-disk format is CSV with a fixed column order and the schema version
embedded in the first header cell:

    schema=v1,id,label,n_addr,lifetime_days,...

Integer-valued features round-trip as decimal integers; real-valued features
are printed with 17 significant digits so read(write(d)) == d exactly.
"""

from __future__ import annotations

import csv
import logging
import random
from dataclasses import dataclass
from typing import IO, Iterable, Mapping

from .clustering import ClusterSet
from .errors import DataError, SchemaMismatchError
from .features import FEATURE_NAMES, INT_FEATURES, SCHEMA_VERSION, FeatureVector

logger = logging.getLogger(__name__)

LABEL_PONZI = "P"
LABEL_OTHER = "nP"


@dataclass(frozen=True)
class Instance:
    id: str
    label: str  # "P" or "nP"
    features: FeatureVector

    def __post_init__(self):
        if self.label not in (LABEL_PONZI, LABEL_OTHER):
            raise DataError(f"instance {self.id}: label must be P or nP, got {self.label!r}")


@dataclass(frozen=True)
class Dataset:
    schema: str
    instances: tuple[Instance, ...]

    @property
    def n_ponzi(self) -> int:
        return sum(1 for inst in self.instances if inst.label == LABEL_PONZI)

    @property
    def n_other(self) -> int:
        return len(self.instances) - self.n_ponzi

    def __len__(self) -> int:
        return len(self.instances)


def assemble(
    features_by_cluster: Mapping[int, FeatureVector],
    ponzi_labels: Mapping[int, str],
) -> Dataset:
    """Build a labeled dataset from per-cluster features.

    Clusters named in `ponzi_labels` become P instances (id = the scheme
    label); every other supplied cluster becomes an nP instance. Labels for
    clusters not present in the feature map are an error.
    """
    unknown = sorted(set(ponzi_labels) - set(features_by_cluster))
    if unknown:
        raise DataError(f"label(s) for unknown cluster(s): {unknown}")
    instances = []
    used_ids: set[str] = set()
    for ci in sorted(features_by_cluster):
        if ci in ponzi_labels:
            inst = Instance(ponzi_labels[ci], LABEL_PONZI, features_by_cluster[ci])
        else:
            inst = Instance(f"c{ci}", LABEL_OTHER, features_by_cluster[ci])
        if inst.id in used_ids:
            raise DataError(f"duplicate instance id: {inst.id}")
        used_ids.add(inst.id)
        instances.append(inst)
    ds = Dataset(SCHEMA_VERSION, tuple(instances))
    if ds.n_ponzi == 0 and len(ds) > 0:
        logger.warning("dataset has no P instances; unusable for training")
    return ds


def sample_background(
    clusters: ClusterSet, n: int, seed: int, exclude: Iterable[int] = ()
) -> list[int]:
    """Sample n cluster indices uniformly without replacement, never excluded ones."""
    excluded = set(exclude)
    population = [i for i in range(clusters.n_clusters) if i not in excluded]
    if n > len(population):
        raise DataError(
            f"cannot sample {n} clusters from a population of {len(population)}"
        )
    return sorted(random.Random(seed).sample(population, n))


def _format_value(name: str, value) -> str:
    if name in INT_FEATURES:
        return str(value)
    return format(value, ".17g")


def write_csv(dataset: Dataset, fp: IO[str]) -> None:
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow([f"schema={dataset.schema}", "id", "label", *FEATURE_NAMES])
    for inst in dataset.instances:
        row = [inst.id, inst.label]
        for name, value in zip(FEATURE_NAMES, inst.features.as_tuple()):
            row.append(_format_value(name, value))
        writer.writerow(row)


def write_features_csv(features_by_cluster: Mapping[int, FeatureVector], fp: IO[str]) -> None:
    """Per-cluster feature table: `schema=v1,cluster_id,<feature columns>`."""
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow([f"schema={SCHEMA_VERSION}", "cluster_id", *FEATURE_NAMES])
    for ci in sorted(features_by_cluster):
        row = [ci]
        fv = features_by_cluster[ci]
        for name, value in zip(FEATURE_NAMES, fv.as_tuple()):
            row.append(_format_value(name, value))
        writer.writerow(row)


def read_features_csv(fp: IO[str]) -> dict[int, FeatureVector]:
    reader = csv.reader(fp)
    header = next(reader, None)
    expected = [f"schema={SCHEMA_VERSION}", "cluster_id", *FEATURE_NAMES]
    if header != expected:
        raise DataError("feature table header does not match the v1 schema")
    out: dict[int, FeatureVector] = {}
    for row_no, row in enumerate(reader, start=2):
        if len(row) != 1 + len(FEATURE_NAMES):
            raise DataError(f"feature table row {row_no}: wrong column count")
        try:
            ci = int(row[0])
            values = {
                name: (int(cell) if name in INT_FEATURES else float(cell))
                for name, cell in zip(FEATURE_NAMES, row[1:])
            }
        except ValueError as exc:
            raise DataError(f"feature table row {row_no}: {exc}") from exc
        if ci in out:
            raise DataError(f"feature table row {row_no}: duplicate cluster id {ci}")
        out[ci] = FeatureVector(**values)
    return out


def read_csv(fp: IO[str]) -> Dataset:
    reader = csv.reader(fp)
    header = next(reader, None)
    if header is None:
        raise DataError("empty dataset file")
    expected = [f"schema={SCHEMA_VERSION}", "id", "label", *FEATURE_NAMES]
    if header != expected:
        if header and header[0].startswith("schema=") and header[0] != expected[0]:
            raise SchemaMismatchError(
                f"dataset schema {header[0]!r} does not match {expected[0]!r}"
            )
        raise DataError("dataset header does not match the v1 feature schema")
    instances = []
    for row_no, row in enumerate(reader, start=2):
        if len(row) != 2 + len(FEATURE_NAMES):
            raise DataError(f"dataset row {row_no}: expected {2 + len(FEATURE_NAMES)} columns")
        values = {}
        try:
            for name, cell in zip(FEATURE_NAMES, row[2:]):
                values[name] = int(cell) if name in INT_FEATURES else float(cell)
        except ValueError as exc:
            raise DataError(f"dataset row {row_no}: {exc}") from exc
        try:
            inst = Instance(row[0], row[1], FeatureVector(**values))
        except DataError as exc:
            raise DataError(f"dataset row {row_no}: {exc}") from exc
        instances.append(inst)
    return Dataset(SCHEMA_VERSION, tuple(instances))
