"""countaug: density-conditioned generative augmentation for counting datasets.

The pipeline stages, in order:

1. ``dataset``  - ingest point-annotated images, splits and captions.
2. ``density``  - render ground-truth density maps and move them around.
3. ``captions`` - embed captions and build similarity-gated swap candidates.
4. ``planning`` - derive the deterministic per-image augmentation schedule.
5. ``client`` / ``mockgen`` / ``service`` - dispatch generation jobs over
   HTTP to any backend that speaks the wire contract (a deterministic mock
   backend ships in-process).
6. ``feed``     - emit per-epoch training manifests balancing real and
   synthetic images.
7. ``metrics``  - MAE/RMSE, blob counting and hyperparameter sweeps.
"""

__version__ = "0.1.0"

from .errors import AnnotationError, CountaugError, FormatError, ProtocolError, StoreError

__all__ = [
    "__version__",
    "CountaugError",
    "AnnotationError",
    "FormatError",
    "ProtocolError",
    "StoreError",
]
