import pytest

from admm_adversary.bench import _select_images, _split_dataset
from admm_adversary.classifier import init_model, train
from admm_adversary.data import load_digits_dataset


@pytest.fixture(scope="session")
def digits_splits():
    dataset = load_digits_dataset()
    return _split_dataset(dataset, 0.8, 0)


@pytest.fixture(scope="session")
def toy_model(digits_splits):
    train_split, _ = digits_splits
    model = init_model((64, 64, 64, 10), seed=0)
    return train(model, train_split, epochs=40, batch_size=32, lr=1e-3, seed=0)


@pytest.fixture(scope="session")
def eval_pool(digits_splits, toy_model):
    """Correctly classified evaluation images for attack tests."""
    _, eval_split = digits_splits
    return _select_images(toy_model, eval_split, 40, seed=0)
