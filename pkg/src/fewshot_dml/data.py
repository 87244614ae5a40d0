"""Datasets, splits, k-shot sampling, the synthetic benchmark, checkpoints.

Dataset files are line-delimited JSON objects with fields id, label,
domain, features.  Checkpoints are a single versioned JSON object; both
formats round-trip float64 values bit-exactly (floats are written with
shortest round-trip repr).  See docs/formats.md for the layouts.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointVersionError, ConfigError, DatasetError, ParseError
from .layers import LayerSpec, ParamBundle
from .optim import AdamState
from .seeding import STREAM_KSHOT, STREAM_SPLIT, STREAM_SYNTH, substream

DOMAINS = ("real_aerial", "real_ground", "game_aerial", "generated_aerial")

CHECKPOINT_VERSION = 1
# deterministic provenance stamp: wall-clock time would break the
# byte-identical-outputs guarantee for same-seed reruns
_CREATED_STAMP = "fewshot-dml 0.1.0"


@dataclass
class FeatureRecord:
    id: str
    label: str
    domain: str
    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.domain not in DOMAINS:
            raise DatasetError(f"record {self.id!r}: unknown domain {self.domain!r}")
        if not np.all(np.isfinite(self.features)):
            raise DatasetError(f"record {self.id!r}: non-finite feature values")


class Dataset:
    """Immutable list of FeatureRecords sharing one feature dimension."""

    def __init__(self, records, label_space=None):
        self.records = list(records)
        if self.records:
            self.dim = len(self.records[0].features)
            for r in self.records:
                if len(r.features) != self.dim:
                    raise DatasetError(
                        f"record {r.id!r} has dim {len(r.features)}, expected {self.dim}")
        else:
            self.dim = 0
        if label_space is None:
            label_space = tuple(sorted({r.label for r in self.records}))
        self.label_space = tuple(label_space)
        known = set(self.label_space)
        for r in self.records:
            if r.label not in known:
                raise DatasetError(f"record {r.id!r}: label {r.label!r} not in label space")
        self._index = {label: i for i, label in enumerate(self.label_space)}

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.label_space != other.label_space or len(self) != len(other):
            return False
        return all(a.id == b.id and a.label == b.label and a.domain == b.domain
                   and np.array_equal(a.features, b.features)
                   for a, b in zip(self.records, other.records))

    def features_matrix(self):
        if not self.records:
            return np.zeros((0, self.dim))
        return np.ascontiguousarray(np.stack([r.features for r in self.records]))

    def label_indices(self):
        return np.array([self._index[r.label] for r in self.records], dtype=np.intp)

    def by_class(self):
        """label -> list of record positions, in record order."""
        out = {label: [] for label in self.label_space}
        for i, r in enumerate(self.records):
            out[r.label].append(i)
        return out

    def subset(self, positions):
        return Dataset([self.records[i] for i in positions], label_space=self.label_space)

    def domains(self):
        return sorted({r.domain for r in self.records})


def save_dataset(dataset, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in dataset.records:
            fh.write(json.dumps({"id": r.id, "label": r.label, "domain": r.domain,
                                 "features": list(r.features)}) + "\n")


def load_dataset(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})", line=lineno) from None
            try:
                records.append(FeatureRecord(str(obj["id"]), str(obj["label"]),
                                             str(obj["domain"]), obj["features"]))
            except KeyError as exc:
                raise ParseError(f"{path}:{lineno}: missing field {exc.args[0]!r}",
                                 line=lineno) from None
    return Dataset(records)


@dataclass
class SplitSpec:
    train_frac: float = 0.6
    val_frac: float = 0.1
    test_frac: float = 0.3
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0 for f in fracs):
            raise ConfigError(f"split fractions must be positive, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {sum(fracs)}")


def split(dataset, spec):
    """Per-class stratified partition: floor(train), floor(val), remainder test."""
    rng = substream(spec.seed, STREAM_SPLIT)
    train_idx, val_idx, test_idx = [], [], []
    for label in dataset.label_space:
        positions = dataset.by_class()[label]
        n = len(positions)
        if n < 3:
            raise DatasetError(f"class {label!r} has {n} records; splitting needs >= 3")
        order = rng.permutation(n)
        shuffled = [positions[i] for i in order]
        # tiny slack absorbs float representation error in frac * n
        n_train = int(math.floor(spec.train_frac * n + 1e-9))
        n_val = int(math.floor(spec.val_frac * n + 1e-9))
        train_idx.extend(shuffled[:n_train])
        val_idx.extend(shuffled[n_train:n_train + n_val])
        test_idx.extend(shuffled[n_train + n_val:])
    return dataset.subset(train_idx), dataset.subset(val_idx), dataset.subset(test_idx)


def kshot_sample(train, k, seed):
    """Exactly k records per class, uniform without replacement, per-seed deterministic."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    rng = substream(seed, STREAM_KSHOT)
    chosen = []
    for label in train.label_space:
        positions = train.by_class()[label]
        if len(positions) < k:
            raise DatasetError(f"class {label!r} has {len(positions)} records, need k={k}")
        picks = rng.choice(len(positions), size=k, replace=False)
        chosen.extend(positions[i] for i in sorted(picks))
    return train.subset(chosen)


@dataclass
class SynthBenchConfig:
    """Gaussian-cluster benchmark with a fixed linear domain map and noise.

    Ground clusters live around random class means; aerial features are a
    shared full-rank linear map of fresh class samples plus a shared shift
    and isotropic noise; game clusters reuse the first `game_overlap` aerial
    class means (perturbed by a per-class offset) and draw fresh means for
    the rest.  Everything is passed through a final ReLU, matching the
    non-negativity of network-extracted features.
    """

    num_classes: int = 8
    game_classes: int = 7
    game_overlap: int = 3
    dim: int = 64
    ground_per_class: int = 100
    aerial_per_class: int = 50
    game_per_class: int = 100
    mean_scale: float = 1.0
    cluster_spread: float = 2.0
    map_strength: float = 0.5
    aerial_noise: float = 0.5
    aerial_shift: float = 1.0
    game_offset: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigError(f"dim must be >= 2, got {self.dim}")
        if min(self.num_classes, self.game_classes) < 1:
            raise ConfigError("class counts must be >= 1")
        if not 0 <= self.game_overlap <= min(self.num_classes, self.game_classes):
            raise ConfigError(
                f"game_overlap {self.game_overlap} must be <= min(real, game) classes")
        if min(self.ground_per_class, self.aerial_per_class, self.game_per_class) < 0:
            raise ConfigError("per-class counts must be >= 0")

    @classmethod
    def from_train_config(cls, cfg, seed):
        return cls(num_classes=cfg.synth_classes, game_classes=cfg.synth_game_classes,
                   game_overlap=cfg.synth_game_overlap, dim=cfg.synth_dim,
                   ground_per_class=cfg.synth_ground_per_class,
                   aerial_per_class=cfg.synth_aerial_per_class,
                   game_per_class=cfg.synth_game_per_class,
                   mean_scale=cfg.synth_mean_scale, cluster_spread=cfg.synth_cluster_spread,
                   map_strength=cfg.synth_map_strength, aerial_noise=cfg.synth_aerial_noise,
                   aerial_shift=cfg.synth_aerial_shift, game_offset=cfg.synth_game_offset,
                   seed=seed)


def _real_label(c):
    return f"class_{c:02d}"


def _game_label(j):
    return f"game_{j:02d}"


def synth_benchmark(config):
    """Generate (ground, real_aerial, game_aerial) datasets per the config."""
    c = config
    struct = substream(c.seed, STREAM_SYNTH, 0)
    mu = c.mean_scale * struct.normal(size=(c.num_classes, c.dim))
    rand_map = struct.normal(size=(c.dim, c.dim)) / math.sqrt(c.dim)
    amap = (1.0 - c.map_strength) * np.eye(c.dim) + c.map_strength * rand_map
    shift = c.aerial_shift * struct.normal(size=c.dim) / math.sqrt(c.dim)
    n_extra = c.game_classes - c.game_overlap
    extra_mu = c.mean_scale * struct.normal(size=(n_extra, c.dim))
    offsets = c.game_offset * struct.normal(size=(c.game_classes, c.dim)) / math.sqrt(c.dim)

    def aerial_view(base_mean, rng, count, extra_offset=0.0):
        raw = base_mean + c.cluster_spread * rng.normal(size=(count, c.dim))
        mapped = raw @ amap.T + shift + extra_offset
        mapped += c.aerial_noise * rng.normal(size=(count, c.dim))
        return np.maximum(mapped, 0.0)

    rng_ground = substream(c.seed, STREAM_SYNTH, 1)
    ground_records = []
    for cls in range(c.num_classes):
        raw = mu[cls] + c.cluster_spread * rng_ground.normal(size=(c.ground_per_class, c.dim))
        feats = np.maximum(raw, 0.0)
        ground_records.extend(
            FeatureRecord(f"ground_{_real_label(cls)}_{i:04d}", _real_label(cls),
                          "real_ground", feats[i])
            for i in range(c.ground_per_class))

    rng_aerial = substream(c.seed, STREAM_SYNTH, 2)
    aerial_records = []
    for cls in range(c.num_classes):
        feats = aerial_view(mu[cls], rng_aerial, c.aerial_per_class)
        aerial_records.extend(
            FeatureRecord(f"aerial_{_real_label(cls)}_{i:04d}", _real_label(cls),
                          "real_aerial", feats[i])
            for i in range(c.aerial_per_class))

    rng_game = substream(c.seed, STREAM_SYNTH, 3)
    game_records = []
    for j in range(c.game_classes):
        base = mu[j] if j < c.game_overlap else extra_mu[j - c.game_overlap]
        feats = aerial_view(base, rng_game, c.game_per_class, extra_offset=offsets[j])
        game_records.extend(
            FeatureRecord(f"game_{_game_label(j)}_{i:04d}", _game_label(j),
                          "game_aerial", feats[i])
            for i in range(c.game_per_class))

    real_labels = [_real_label(cls) for cls in range(c.num_classes)]
    game_labels = [_game_label(j) for j in range(c.game_classes)]
    return (Dataset(ground_records, label_space=real_labels),
            Dataset(aerial_records, label_space=real_labels),
            Dataset(game_records, label_space=game_labels))


# --- feature standardization (optional, off by default) ---------------------


def fit_standardizer(*datasets):
    """Per-dimension mean/std over the given (training) datasets."""
    stacked = np.concatenate([d.features_matrix() for d in datasets if len(d)])
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std < 1e-12] = 1.0
    return mean, std


def apply_standardizer(dataset, mean, std):
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    records = [FeatureRecord(r.id, r.label, r.domain, (r.features - mean) / std)
               for r in dataset.records]
    return Dataset(records, label_space=dataset.label_space)


# --- checkpoints -------------------------------------------------------------


def _spec_to_json(spec):
    return {"input_dim": spec.input_dim, "output_dim": spec.output_dim,
            "activation": spec.activation, "slope": spec.slope}


def _spec_from_json(obj):
    return LayerSpec(int(obj["input_dim"]), int(obj["output_dim"]),
                     str(obj["activation"]), float(obj["slope"]))


def _bundle_to_json(bundle):
    return {"layer_specs": [_spec_to_json(s) for s in bundle.specs],
            "weights": [w.tolist() for w in bundle.weights],
            "biases": [b.tolist() for b in bundle.biases]}


def _bundle_from_json(obj):
    specs = tuple(_spec_from_json(s) for s in obj["layer_specs"])
    weights = [np.array(w, dtype=np.float64).reshape(s.output_dim, s.input_dim)
               for w, s in zip(obj["weights"], specs)]
    biases = [np.array(b, dtype=np.float64) for b in obj["biases"]]
    return ParamBundle(specs, weights, biases)


def _adam_to_json(state):
    return {"adam_m": [m.tolist() for m in state.first_moment],
            "adam_v": [v.tolist() for v in state.second_moment],
            "step_count": state.step_count}


def _adam_from_json(obj, bundle):
    shapes = [a.shape for a in bundle.arrays()]
    first = [np.array(m, dtype=np.float64).reshape(sh)
             for m, sh in zip(obj["adam_m"], shapes)]
    second = [np.array(v, dtype=np.float64).reshape(sh)
              for v, sh in zip(obj["adam_v"], shapes)]
    return AdamState(int(obj["step_count"]), first, second)


@dataclass
class Checkpoint:
    nets: dict
    optim_states: dict
    metadata: dict
    seed: int
    config_hash: str
    version: int = CHECKPOINT_VERSION
    created: str = _CREATED_STAMP


def save_checkpoint(nets, optim_states, metadata, path, seed=0, cfg_hash=""):
    """Versioned, self-describing JSON serialization of named nets + optimizer state."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "created": _CREATED_STAMP,
        "seed": int(seed),
        "config_hash": cfg_hash,
        "metadata": metadata or {},
        "nets": {name: _bundle_to_json(bundle) for name, bundle in nets.items()},
        "optim": {name: _adam_to_json(state)
                  for name, state in (optim_states or {}).items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid checkpoint ({exc.msg})") from None
    version = doc.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {version!r} unsupported (this build reads "
            f"{CHECKPOINT_VERSION})")
    nets = {name: _bundle_from_json(obj) for name, obj in doc["nets"].items()}
    optim_states = {name: _adam_from_json(obj, nets[name])
                    for name, obj in doc.get("optim", {}).items() if name in nets}
    return Checkpoint(nets, optim_states, doc.get("metadata", {}),
                      int(doc.get("seed", 0)), doc.get("config_hash", ""),
                      version, doc.get("created", ""))
