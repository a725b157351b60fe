"""Access to the small corpus bundled with the package for demos and tests."""

from importlib.resources import files


def toy_corpus_path() -> str:
    """Path to the bundled plain-text toy corpus (one document per line)."""
    return str(files("adgstego").joinpath("data/toy_corpus.txt"))
