"""Two-branch fusion network: image encoder + metadata encoder + joint head.

The image backbone is a named, swappable component. The default full-scale
family is the compound-scaled fused-conv architecture, variant B1, built
from torchvision's block configs (no published torchvision weights exist
for that variant, so it initializes randomly; the sibling torchvision
families below offer pretrained weights). A small randomly initialized
"desk_cnn" stands in for the backbone in tests so the whole suite runs in
minutes on a CPU.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn
from torchvision.models import efficientnet as tv_efficientnet

from .dataset import ClassTaxonomy, GENDER_ENCODING, YES_NO_ENCODING
from .errors import BuildError, ContractError
from .transforms import NormalizationParams

METADATA_DIM = 5

DEFAULT_ENCODER_FAMILY = "efficientnet_v2_b1"
DESK_ENCODER_FAMILY = "desk_cnn"
DESK_FEATURE_DIM = 64

# torchvision families usable as drop-in backbones with published weights
TORCHVISION_FAMILIES = ("efficientnet_v2_s", "efficientnet_b1")


@dataclass(frozen=True)
class EncoderSpec:
    family: str = DEFAULT_ENCODER_FAMILY
    pretrained: bool = False
    feature_dim: int = 1280

    def __post_init__(self):
        if self.feature_dim <= 0:
            raise BuildError(f"feature_dim must be positive, got {self.feature_dim}")

    @classmethod
    def desk_scale(cls) -> "EncoderSpec":
        return cls(family=DESK_ENCODER_FAMILY, pretrained=False, feature_dim=DESK_FEATURE_DIM)


class DeskCNNEncoder(nn.Module):
    """Three conv blocks and a global average pool; random initialization.

    feature_dim must be divisible by 4 (channel widths are fd/4, fd/2, fd).
    """

    def __init__(self, feature_dim: int = DESK_FEATURE_DIM):
        super().__init__()
        if feature_dim < 4 or feature_dim % 4:
            raise BuildError(f"desk_cnn feature_dim must be a multiple of 4, got {feature_dim}")
        widths = (feature_dim // 4, feature_dim // 2, feature_dim)
        blocks = []
        in_ch = 3
        for w in widths:
            blocks += [
                nn.Conv2d(in_ch, w, kernel_size=3, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(w),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(2),
            ]
            in_ch = w
        self.blocks = nn.Sequential(*blocks)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.feature_dim = feature_dim

    def forward(self, x):
        return self.pool(self.blocks(x)).flatten(1)


def _efficientnet_v2_b1_config():
    # V2 base blocks scaled to the B1 variant (width 1.0, depth 1.1)
    return [
        tv_efficientnet.FusedMBConvConfig(1, 3, 1, 32, 16, 2),
        tv_efficientnet.FusedMBConvConfig(4, 3, 2, 16, 32, 3),
        tv_efficientnet.FusedMBConvConfig(4, 3, 2, 32, 48, 3),
        tv_efficientnet.MBConvConfig(4, 3, 2, 48, 96, 4),
        tv_efficientnet.MBConvConfig(6, 3, 1, 96, 112, 6),
        tv_efficientnet.MBConvConfig(6, 3, 2, 112, 192, 9),
    ]


class TorchvisionEncoder(nn.Module):
    """Wraps a torchvision classifier as a pooled feature extractor."""

    def __init__(self, net: nn.Module, feature_dim: int):
        super().__init__()
        self.features = net.features
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.feature_dim = feature_dim

    def forward(self, x):
        return self.pool(self.features(x)).flatten(1)


def build_encoder(spec: EncoderSpec) -> nn.Module:
    if spec.family == DESK_ENCODER_FAMILY:
        return DeskCNNEncoder(feature_dim=spec.feature_dim)

    if spec.family == DEFAULT_ENCODER_FAMILY:
        if spec.pretrained:
            raise BuildError(
                "no published torchvision weights exist for efficientnet_v2_b1; "
                "set pretrained=false or pick one of "
                f"{', '.join(TORCHVISION_FAMILIES)}"
            )
        if spec.feature_dim != 1280:
            raise BuildError("efficientnet_v2_b1 produces 1280-dim features")
        net = tv_efficientnet.EfficientNet(
            _efficientnet_v2_b1_config(), dropout=0.2, last_channel=1280
        )
        return TorchvisionEncoder(net, feature_dim=1280)

    if spec.family in TORCHVISION_FAMILIES:
        import torchvision.models as tv_models

        ctor = getattr(tv_models, spec.family)
        net = ctor(weights="DEFAULT" if spec.pretrained else None)
        feature_dim = net.classifier[-1].in_features
        if spec.feature_dim != feature_dim:
            raise BuildError(
                f"{spec.family} produces {feature_dim}-dim features, "
                f"spec says {spec.feature_dim}"
            )
        return TorchvisionEncoder(net, feature_dim=feature_dim)

    raise BuildError(
        f"unknown encoder family '{spec.family}'; known: "
        f"{DEFAULT_ENCODER_FAMILY}, {DESK_ENCODER_FAMILY}, {', '.join(TORCHVISION_FAMILIES)}"
    )


DEFAULT_METADATA_HIDDEN = (32, 16)
DEFAULT_HEAD_HIDDEN = 128
DEFAULT_HEAD_DROPOUT = 0.3


class FusionModel(nn.Module):
    """Concatenates image and metadata embeddings and classifies jointly."""

    def __init__(
        self,
        encoder: nn.Module,
        taxonomy: ClassTaxonomy,
        metadata_dim: int = METADATA_DIM,
        metadata_hidden: tuple[int, ...] = DEFAULT_METADATA_HIDDEN,
        head_hidden: int = DEFAULT_HEAD_HIDDEN,
        head_dropout: float = DEFAULT_HEAD_DROPOUT,
    ):
        super().__init__()
        if metadata_dim != METADATA_DIM:
            raise BuildError(
                f"metadata branch expects {METADATA_DIM} inputs "
                f"(age, gender, smoking, betel_quid, alcohol), got {metadata_dim}"
            )
        self.encoder = encoder
        self.taxonomy = taxonomy
        self.metadata_dim = metadata_dim
        self.metadata_hidden = tuple(metadata_hidden)
        self.head_hidden = head_hidden
        self.head_dropout = head_dropout

        layers: list[nn.Module] = []
        in_dim = metadata_dim
        for width in metadata_hidden:
            layers += [nn.Linear(in_dim, width), nn.ReLU(inplace=True)]
            in_dim = width
        self.metadata_net = nn.Sequential(*layers)
        self.metadata_embedding_dim = in_dim

        fused = encoder.feature_dim + self.metadata_embedding_dim
        self.head = nn.Sequential(
            nn.Linear(fused, head_hidden),
            nn.ReLU(inplace=True),
            nn.Dropout(head_dropout),
            nn.Linear(head_hidden, taxonomy.size),
        )

    @property
    def num_classes(self) -> int:
        return self.taxonomy.size

    def forward(self, images: torch.Tensor, metadata: torch.Tensor) -> torch.Tensor:
        if metadata.shape[-1] != self.metadata_dim:
            raise ContractError(
                f"metadata batch must be Bx{self.metadata_dim}, got {tuple(metadata.shape)}"
            )
        image_features = self.encoder(images)
        metadata_features = self.metadata_net(metadata)
        fused = torch.cat([image_features, metadata_features], dim=1)
        return self.head(fused)


def build_model(
    spec: EncoderSpec,
    taxonomy: ClassTaxonomy,
    metadata_dim: int = METADATA_DIM,
    metadata_hidden: tuple[int, ...] = DEFAULT_METADATA_HIDDEN,
    head_hidden: int = DEFAULT_HEAD_HIDDEN,
    head_dropout: float = DEFAULT_HEAD_DROPOUT,
    seed: int | None = None,
) -> FusionModel:
    """Construct the fusion model with seeded initialization."""
    if seed is not None:
        torch.manual_seed(seed)
    encoder = build_encoder(spec)
    return FusionModel(
        encoder=encoder,
        taxonomy=taxonomy,
        metadata_dim=metadata_dim,
        metadata_hidden=metadata_hidden,
        head_hidden=head_hidden,
        head_dropout=head_dropout,
    )


def predict(model: FusionModel, images: torch.Tensor, metadata: torch.Tensor) -> torch.Tensor:
    """Softmax probabilities in inference mode; argmax is the prediction.

    Accepts a single example (3x224x224 and a 5-vector) or a batch.
    """
    single = images.dim() == 3
    if single:
        images = images.unsqueeze(0)
        metadata = metadata.unsqueeze(0)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            probs = torch.softmax(model(images, metadata), dim=-1)
    finally:
        model.train(was_training)
    return probs.squeeze(0) if single else probs


@dataclass
class Checkpoint:
    """Everything needed for standalone inference."""

    state_dict: dict
    encoder_spec: EncoderSpec
    taxonomy: ClassTaxonomy
    normalization: NormalizationParams
    age_min: float
    age_max: float
    metadata_hidden: tuple[int, ...] = DEFAULT_METADATA_HIDDEN
    head_hidden: int = DEFAULT_HEAD_HIDDEN
    head_dropout: float = DEFAULT_HEAD_DROPOUT
    val_metric: float | None = None
    encoding_tables: dict = field(
        default_factory=lambda: {"gender": dict(GENDER_ENCODING), "yes_no": dict(YES_NO_ENCODING)}
    )


def save_checkpoint(ckpt: Checkpoint, path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "state_dict": ckpt.state_dict,
            "encoder_spec": {
                "family": ckpt.encoder_spec.family,
                "pretrained": ckpt.encoder_spec.pretrained,
                "feature_dim": ckpt.encoder_spec.feature_dim,
            },
            "taxonomy": {"name": ckpt.taxonomy.name, "classes": list(ckpt.taxonomy.classes)},
            "normalization": {"mean": list(ckpt.normalization.mean), "std": list(ckpt.normalization.std)},
            "age_min": ckpt.age_min,
            "age_max": ckpt.age_max,
            "metadata_hidden": list(ckpt.metadata_hidden),
            "head_hidden": ckpt.head_hidden,
            "head_dropout": ckpt.head_dropout,
            "val_metric": ckpt.val_metric,
            "encoding_tables": ckpt.encoding_tables,
        },
        path,
    )


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = torch.load(Path(path), map_location="cpu", weights_only=False)
    return Checkpoint(
        state_dict=data["state_dict"],
        encoder_spec=EncoderSpec(
            family=data["encoder_spec"]["family"],
            pretrained=data["encoder_spec"]["pretrained"],
            feature_dim=data["encoder_spec"]["feature_dim"],
        ),
        taxonomy=ClassTaxonomy(data["taxonomy"]["name"], tuple(data["taxonomy"]["classes"])),
        normalization=NormalizationParams(
            mean=tuple(data["normalization"]["mean"]), std=tuple(data["normalization"]["std"])
        ),
        age_min=data["age_min"],
        age_max=data["age_max"],
        metadata_hidden=tuple(data["metadata_hidden"]),
        head_hidden=data["head_hidden"],
        head_dropout=data["head_dropout"],
        val_metric=data.get("val_metric"),
        encoding_tables=data.get("encoding_tables", {}),
    )


def model_from_checkpoint(ckpt: Checkpoint) -> FusionModel:
    model = build_model(
        ckpt.encoder_spec.__class__(  # rebuild without pretrained download
            family=ckpt.encoder_spec.family,
            pretrained=False,
            feature_dim=ckpt.encoder_spec.feature_dim,
        ),
        ckpt.taxonomy,
        metadata_hidden=ckpt.metadata_hidden,
        head_hidden=ckpt.head_hidden,
        head_dropout=ckpt.head_dropout,
    )
    model.load_state_dict(ckpt.state_dict)
    model.eval()
    return model
