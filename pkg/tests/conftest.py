import numpy as np
import pytest

from musemer import corpus


@pytest.fixture
def wav_factory(tmp_path):
    """Write a sine-tone WAV into tmp_path and return its path."""

    def make(name="clip.wav", freq=440.0, duration=10.0, sample_rate=44100,
             fmt="float32", amplitude=0.5, channels=1):
        t = np.arange(int(round(duration * sample_rate))) / sample_rate
        sig = amplitude * np.sin(2.0 * np.pi * freq * t)
        if channels > 1:
            sig = np.tile(sig[:, None], (1, channels))
        path = tmp_path / name
        corpus.write_wav(path, sig, sample_rate, fmt=fmt)
        return path

    return make


def sine(freq, duration, sample_rate=44100, amplitude=0.5):
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    return amplitude * np.sin(2.0 * np.pi * freq * t)
