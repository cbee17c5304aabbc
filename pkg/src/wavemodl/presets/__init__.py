"""Bundled experiment configs, loadable by name from the CLI."""

from importlib import resources


def preset_names():
    out = []
    for entry in resources.files(__name__).iterdir():
        if entry.name.endswith(".json"):
            out.append(entry.name[:-5])
    return sorted(out)


def preset_path(name):
    path = resources.files(__name__) / f"{name}.json"
    if not path.is_file():
        raise FileNotFoundError(f"no preset named {name!r}")
    return str(path)
