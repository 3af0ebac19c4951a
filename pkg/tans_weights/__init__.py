from tans_weights.distributions import (
    Distribution,
    histogram,
    merge_distributions,
    shannon_entropy,
    entropy_bound_bytes,
    delta_h_bound,
)
from tans_weights.quantizer import (
    QuantizerSpec,
    ScalePolicy,
    make_quantizer,
    quantize,
    dequantize,
)
from tans_weights.tans_core import (
    NormalizedHistogram,
    EncodedStream,
    normalize_freqs,
    build_tables,
    encode,
    decode,
    lut_footprint,
    measured_rate,
)
from tans_weights.stream_codec import (
    LayerBundle,
    split_streams,
    merge_streams,
    encode_layer,
    decode_layer,
    bundle_size_report,
)
from tans_weights.allocation import (
    AllocationConfig,
    PrecisionParams,
    entropy_table,
    entropy_loss,
    entropy_loss_grad,
    allocate,
)
from tans_weights.container import (
    TensorManifest,
    write_model,
    read_model,
    load_manifest,
    load_tensors,
)
