"""Self-supervised F0 and voicing estimation from CQT frames.

Submodules: ``corpus`` (synthetic stems, WAV/CSV I/O), ``cqt`` (features and
augmentation), ``autodiff`` (tensor engine), ``model``, ``losses``,
``trainer`` (EM reweighting), ``voicing``, ``synth`` (harmonic resynthesis),
``evaluation`` and ``cli``.

Nothing heavy is imported here so the command line can pin thread counts
before numpy loads.
"""

__version__ = "0.1.0"
