"""The eight vocal-burst classes, in canonical index order."""

CLASS_NAMES = ("Cry", "Gasp", "Groan", "Grunt", "Laugh", "Pant", "Scream", "Other")
N_CLASSES = len(CLASS_NAMES)

CLASS_INDEX = {name: i for i, name in enumerate(CLASS_NAMES)}

UNLABELED = "?"


def label_index(name: str) -> int:
    try:
        return CLASS_INDEX[name]
    except KeyError:
        raise ValueError(f"unknown class label {name!r}; expected one of {CLASS_NAMES}") from None
