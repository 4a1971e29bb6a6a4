"""APK to feature record: the three extraction branches side by side."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .apk import concat_dex_bytes, open_apk
from .axml import parse_manifest
from .catalog import SdkCatalog, load_catalog
from .context import app_tokens
from .dex import parse_dex
from .embed import DenseCnnConfig, embed_texture_grid
from .embed.densecnn import prepare_input
from .iccg import build_iccg, count_paths
from .image import image_from_bytes
from .netconst import scan_dex_constants, scan_resources

EXTRACTION_VERSION = "bctx-extract-1"
BACKENDS = ("texture", "cnn")


@dataclass(frozen=True)
class ExtractConfig:
    backend: str = "texture"
    cnn_input_side: int = 64
    catalog_path: Optional[str] = None
    version: str = EXTRACTION_VERSION

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")

    def config_hash(self, catalog: Optional[SdkCatalog] = None) -> str:
        d = asdict(self)
        d.pop("catalog_path")
        d["catalog"] = (catalog or load_catalog(self.catalog_path)).fingerprint()
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


@dataclass
class FeatureRecord:
    app_id: str
    label: str
    f_bin: np.ndarray  # float64; texture vector or flattened (3, s, s) image in [0, 1]
    tokens: tuple  # sorted raw context tokens; f_cxt is derived against a training vocabulary
    f_lib: np.ndarray  # uint64 path counts, one per catalog entry
    version: str = EXTRACTION_VERSION
    backend: str = "texture"
    config_hash: str = ""
    source_sha256: str = ""
    source_path: str = ""
    warnings: tuple = field(default=())

    def __eq__(self, other):
        if not isinstance(other, FeatureRecord):
            return NotImplemented
        return (
            self.app_id == other.app_id and self.label == other.label and self.tokens == other.tokens
            and self.version == other.version and self.backend == other.backend and self.config_hash == other.config_hash
            and self.source_sha256 == other.source_sha256 and self.source_path == other.source_path
            and self.warnings == other.warnings
            and self.f_bin.dtype == other.f_bin.dtype and self.f_bin.tobytes() == other.f_bin.tobytes()
            and self.f_lib.dtype == other.f_lib.dtype and self.f_lib.tobytes() == other.f_lib.tobytes()
        )


def bin_features(dex_stream: bytes, config: ExtractConfig) -> np.ndarray:
    image = image_from_bytes(dex_stream)
    if config.backend == "texture":
        return embed_texture_grid(image)
    return prepare_input(image, config.cnn_input_side)[0].ravel()


def extract_apk(path, app_id: str, label: str, config: ExtractConfig = ExtractConfig(),
                catalog: Optional[SdkCatalog] = None) -> FeatureRecord:
    catalog = catalog or load_catalog(config.catalog_path)
    raw = Path(path).read_bytes()
    bundle = open_apk(path)
    dexes = [parse_dex(data) for _, data in bundle.dex_entries]
    facts = parse_manifest(bundle.manifest_bytes)

    netconsts = []
    for dex in dexes:
        netconsts += scan_dex_constants(dex)
    netconsts += scan_resources(bundle)

    graph = build_iccg(dexes, facts)
    warnings = list(bundle.warnings)
    for name, dex in zip(bundle.dex_names(), dexes):
        warnings += [f"{name}: {w}" for w in dex.warnings]
    return FeatureRecord(
        app_id=app_id,
        label=label,
        f_bin=bin_features(concat_dex_bytes(bundle), config),
        tokens=tuple(sorted(app_tokens(facts, netconsts))),
        f_lib=count_paths(graph, catalog),
        version=config.version,
        backend=config.backend,
        config_hash=config.config_hash(catalog),
        source_sha256=hashlib.sha256(raw).hexdigest(),
        source_path=str(path),
        warnings=tuple(warnings),
    )


def cnn_config_for(config: ExtractConfig, **kw) -> DenseCnnConfig:
    return DenseCnnConfig(input_side=config.cnn_input_side, **kw)
