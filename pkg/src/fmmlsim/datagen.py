"""Synthetic multi-modal classification data with label-skew partitions.

Classes are Gaussian clusters: one mean vector per (class, modality), the
same means for every device, plus per-sample noise. Device heterogeneity
comes from two places: which modalities a device owns, and which label
distribution its local data follows.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError


class PartitionScheme(str, Enum):
    """Label-skew styles: 3-category support, 50% dominant, 30% dominant."""

    NONIID1 = "noniid1"
    NONIID2 = "noniid2"
    NONIID3 = "noniid3"


DOMINANT_FRACTION = {PartitionScheme.NONIID2: 0.5, PartitionScheme.NONIID3: 0.3}
SUPPORT_SIZE = 3  # categories per device under NONIID1


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int
    input_dims: tuple[int, ...]
    class_means: tuple[tuple[np.ndarray, ...], ...]  # [class][modality] -> (d_m,)
    noise_std: float
    samples_per_device: int
    train_fraction: float

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if len(self.input_dims) < 1:
            raise ConfigError("need at least one modality")
        if self.noise_std <= 0:
            raise ConfigError("noise_std must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if len(self.class_means) != self.num_classes:
            raise ConfigError("one mean row per class required")

    @property
    def num_modalities(self) -> int:
        return len(self.input_dims)


@dataclass
class SampleSet:
    """A batch of samples: per-modality feature matrices plus labels."""

    features: dict[int, np.ndarray]  # modality -> (n, d_m)
    labels: np.ndarray               # (n,)

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass
class DeviceDataset:
    device_id: int
    owned: tuple[int, ...]
    train: SampleSet
    test: SampleSet

    @property
    def label_support(self) -> tuple[int, ...]:
        return tuple(sorted(set(np.concatenate([self.train.labels, self.test.labels]).tolist())))


def make_class_means(rng: np.random.Generator, num_classes: int,
                     input_dims: Sequence[int], separation: float = 3.0):
    """Class cluster centres: unit Gaussian draws scaled by the separation."""
    return tuple(
        tuple(separation * rng.normal(size=d) for d in input_dims)
        for _ in range(num_classes))


def default_modality_profile(num_devices: int, num_modalities: int) -> list[tuple[int, int]]:
    """Group sizes by modality count: (count, modalities_owned) pairs.

    Two modalities: a third of the devices own both, the rest own one.
    Otherwise the devices split evenly across counts M..1.
    """
    if num_modalities == 1:
        return [(num_devices, 1)]
    if num_modalities == 2:
        both = max(1, round(num_devices / 3))
        return [(both, 2), (num_devices - both, 1)]
    base, extra = divmod(num_devices, num_modalities)
    sizes = [base + (1 if i < extra else 0) for i in range(num_modalities)]
    return [(sizes[i], num_modalities - i) for i in range(num_modalities)]


def assign_modalities(num_devices: int, num_modalities: int,
                      profile: Sequence[tuple[int, int]]) -> list[tuple[int, ...]]:
    """Assign each device its owned modality set according to the profile.

    Within a group the subsets of the requested size rotate through all
    combinations, so ownership stays balanced across modalities.
    """
    from itertools import combinations

    counts = [int(c) for c, _ in profile]
    if sum(counts) != num_devices or any(c < 0 for c in counts):
        raise ConfigError(f"profile group sizes {counts} do not partition {num_devices} devices")
    owned: list[tuple[int, ...]] = []
    for count, size in profile:
        if not 1 <= size <= num_modalities:
            raise ConfigError(f"profile modality count {size} outside 1..{num_modalities}")
        combos = list(combinations(range(1, num_modalities + 1), size))
        owned.extend(combos[i % len(combos)] for i in range(count))
    covered = set().union(*owned) if owned else set()
    if covered != set(range(1, num_modalities + 1)):
        raise ConfigError(f"profile leaves modalities {sorted(set(range(1, num_modalities + 1)) - covered)} unowned")
    return owned


def partition_labels(scheme: PartitionScheme, num_classes: int, count: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Draw one device's label multiset under the given skew scheme."""
    scheme = PartitionScheme(scheme)
    if scheme is PartitionScheme.NONIID1:
        if num_classes < SUPPORT_SIZE:
            raise ConfigError(f"{scheme.value} needs at least {SUPPORT_SIZE} classes")
        support = np.sort(rng.choice(num_classes, size=SUPPORT_SIZE, replace=False))
        if count >= SUPPORT_SIZE:
            # one forced sample per category keeps the support exact
            labels = np.concatenate([support, rng.choice(support, size=count - SUPPORT_SIZE)])
        else:
            labels = rng.choice(support, size=count)
        rng.shuffle(labels)
        return labels.astype(np.int64)
    frac = DOMINANT_FRACTION[scheme]
    dominant = int(rng.integers(num_classes))
    n_dom = math.ceil(frac * count)
    others = np.array([c for c in range(num_classes) if c != dominant])
    labels = np.concatenate([
        np.full(n_dom, dominant, dtype=np.int64),
        rng.choice(others, size=count - n_dom).astype(np.int64)])
    rng.shuffle(labels)
    return labels


def generate_device_data(spec: SyntheticSpec, labels: np.ndarray,
                         owned: Sequence[int], device_id: int,
                         rng: np.random.Generator) -> DeviceDataset:
    """Materialize Gaussian samples for one device and split train/test."""
    owned = tuple(sorted(owned))
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    features = {}
    for m in owned:
        d = spec.input_dims[m - 1]
        means = np.stack([spec.class_means[c][m - 1] for c in range(spec.num_classes)])
        features[m] = means[labels] + rng.normal(0.0, spec.noise_std, size=(n, d))
    n_train = int(round(spec.train_fraction * n))
    n_train = min(max(n_train, 1), n - 1) if n > 1 else n
    train = SampleSet({m: x[:n_train] for m, x in features.items()}, labels[:n_train])
    test = SampleSet({m: x[n_train:] for m, x in features.items()}, labels[n_train:])
    return DeviceDataset(device_id, owned, train, test)


# ------------------------- CSV dump / load -------------------------

def dump_datasets_csv(datasets: Sequence[DeviceDataset], path: str | Path,
                      input_dims: Sequence[int]) -> None:
    """One row per sample; feature columns are empty for unowned modalities."""
    header = ["device", "split", "label"]
    for m, d in enumerate(input_dims, start=1):
        header.extend(f"m{m}_f{i}" for i in range(d))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for ds in datasets:
            for split_name, split in (("train", ds.train), ("test", ds.test)):
                for i in range(len(split)):
                    row = [ds.device_id, split_name, int(split.labels[i])]
                    for m, d in enumerate(input_dims, start=1):
                        if m in split.features:
                            row.extend(repr(float(v)) for v in split.features[m][i])
                        else:
                            row.extend([""] * d)
                    writer.writerow(row)


def load_datasets_csv(path: str | Path) -> list[DeviceDataset]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dims: dict[int, int] = {}
        for col in header[3:]:
            m, _ = col[1:].split("_f")
            dims[int(m)] = dims.get(int(m), 0) + 1
        rows: dict[tuple[int, str], list[tuple[int, dict[int, np.ndarray]]]] = {}
        for row in reader:
            dev, split, label = int(row[0]), row[1], int(row[2])
            feats, off = {}, 3
            for m in sorted(dims):
                cell = row[off:off + dims[m]]
                if cell[0] != "":
                    feats[m] = np.array([float(v) for v in cell])
                off += dims[m]
            rows.setdefault((dev, split), []).append((label, feats))
    devices = sorted({dev for dev, _ in rows})
    out = []
    for dev in devices:
        sets = {}
        owned: tuple[int, ...] = ()
        for split in ("train", "test"):
            items = rows.get((dev, split), [])
            labels = np.array([lab for lab, _ in items], dtype=np.int64)
            owned = tuple(sorted(items[0][1])) if items else owned
            feats = {m: np.stack([f[m] for _, f in items]) for m in owned} if items else {}
            sets[split] = SampleSet(feats, labels)
        out.append(DeviceDataset(dev, owned, sets["train"], sets["test"]))
    return out
