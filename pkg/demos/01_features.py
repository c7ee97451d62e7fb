"""
Log-mel and MFCC features of a synthetic voice
==============================================

A 4 s harmonic tone at 16 kHz becomes a 321 x 128 feature matrix:
400-sample periodic Hann frames every 200 samples, reflect padded at both ends.
"""

import numpy as np

from mamkit.dsp import AudioClip, mel_center_frequencies, mel_spectrogram, mfcc
from mamkit.synthetic import harmonic_tone

rng = np.random.default_rng(0)
clip = AudioClip(harmonic_tone(200.0, 4.0, rng), 16000)
print("samples:", clip.samples.shape, "seconds:", clip.duration)

# log-mel: natural log of the mel power plus a 1e-10 floor
mel = mel_spectrogram(clip)
print("log-mel:", mel.shape, "frame rate:", mel.frame_rate, "Hz")

# the loudest channel sits on the fundamental
centres = mel_center_frequencies()
loudest = int(np.argmax(mel.values.mean(axis=0)))
print(f"loudest mel channel {loudest} centred at {centres[loudest]:.0f} Hz")

# MFCC keeps all 128 orthonormal DCT coefficients of every log-mel frame
cep = mfcc(clip)
print("mfcc:", cep.shape, "c0 mean:", round(float(cep.values[:, 0].mean()), 2))

# silence hits the log floor exactly
silent = mel_spectrogram(AudioClip(np.zeros(16000), 16000))
print("silence:", float(silent.values.max()), "== log(1e-10) =", float(np.log(1e-10)))
