from .conformer import ConformerBlock, ConformerConfig, ConformerEncoder
from .decoder import DecoderBlock, DecoderConfig, TokenLayout, TransformerDecoder
from .heads import MSTCN, MSTCNConfig, ProjectionHead, ProjectionHeadConfig
from .spatial import SpatialEncoder, SpatialEncoderConfig
from .zoo import (
    FeatureStandardizer,
    ModelConfig,
    PretextModel,
    SentenceModel,
    VisualEncoder,
    WordModel,
    load_checkpoint,
    load_encoder,
    parameter_report,
    preset,
    save_checkpoint,
    tap_features,
)
