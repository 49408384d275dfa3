"""heartseg: S1/S2 heart sound segmentation for phonocardiogram recordings.

Pipeline stages: zero-phase Butterworth bandpass and dominant-band FFT
filtering, onset-strength event detection, dynamic-programming S1/S2
labeling with sequence correction, heart-rate estimation, a Siamese 1D-CNN
event classifier, and the total-error evaluation harness.
"""

from .config import PipelineConfig, TrainParams, load_config_file
from .dp_labeler import (
    DpConfig,
    LabeledOnset,
    LabeledSequence,
    backtrack_onsets,
    correct_sequence,
    heart_rate,
    label_onsets,
    penalty,
)
from .evaluation import ErrorReport, evaluate_dataset, segment_recording, total_error
from .filtering import (
    BandpassConfig,
    FftFilterConfig,
    Spectrum,
    butterworth_bandpass,
    dominant_frequencies,
    fft,
    fft_filter,
    ifft,
)
from .onset import (
    MelSpectrogram,
    OnsetEnvelope,
    OnsetParams,
    OnsetSequence,
    backtrack_to_minimum,
    detect_onsets,
    mel_spectrogram,
    onset_strength,
    pick_peaks,
    strength_envelope,
)
from .siamese import (
    EventImage,
    PairSample,
    SiameseHyper,
    SiameseModel,
    classify_event,
    embed,
    extract_event,
    load_model,
    make_pairs,
    save_model,
    similarity,
    train,
)
from .signal_io import AnnotationSet, PcgSignal, load_annotations, read_wav, resample, write_wav

__version__ = "0.1.0"
