"""Audio-driven dynamic 3D Gaussian splatting on a CPU autodiff tape.

Subpackages cover the numeric core (``tensor``), the Gaussian scene model
and rasterizer (``gaussians``, ``rasterizer``), the factorized
audio-conditioned feature field (``plane``), audio ingestion (``audio``),
deformation decoding (``deform``), losses and metrics (``losses``), the
synthetic talking-scene generator (``synthetic``), two-stage training
(``trainer``), the representation benchmark (``bench``) and the CLI
(``cli``).
"""

__version__ = "0.1.0"
