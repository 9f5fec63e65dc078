import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from triagekit import vitalgen as vg
from triagekit.cvae import VitalSignAugmenter

# training config used wherever a converged augmenter is needed; the paper-
# default learning rate (1e-4) is kept as the package default but is too slow
# for test-sized corpora
AUGMENTER_FIT = dict(epochs=200, learning_rate=1e-3, batch_size=8)


@pytest.fixture(scope="session")
def clinical_reference():
    spec = vg.GeneratorSpec(seed=501, per_class=30, timesteps=120)
    return vg.generate_clinical_reference(spec)


@pytest.fixture(scope="session")
def trained_augmenter(clinical_reference):
    model = VitalSignAugmenter(seed=0, **AUGMENTER_FIT)
    model.fit(clinical_reference)
    return model
