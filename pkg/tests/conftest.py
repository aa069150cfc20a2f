import json

import pytest

from countaug.simulate import make_corpus


@pytest.fixture
def corpus():
    return make_corpus(12, seed=5, min_count=1, max_count=30)


@pytest.fixture
def fsc_files(tmp_path):
    """A tiny two-image annotation set in the 4-corner-polygon schema."""
    annotations = {
        "im_a.jpg": {
            "points": [[10.0, 12.0], [40.5, 30.25], [55.0, 47.0]],
            "box_examples_coordinates": [
                [[8.0, 10.0], [14.0, 10.0], [14.0, 16.0], [8.0, 16.0]],
                [[38.0, 28.0], [44.0, 28.0], [44.0, 34.0], [38.0, 34.0]],
                [[52.0, 44.0], [58.0, 44.0], [58.0, 50.0], [52.0, 50.0]],
            ],
        },
        "im_b.jpg": {
            "points": [[5.0, 5.0]],
            "box_examples_coordinates": [
                [[2.0, 2.0], [9.0, 2.0], [9.0, 9.0], [2.0, 9.0]],
            ],
        },
    }
    dims = {"im_a.jpg": [64, 56], "im_b.jpg": {"width": 32, "height": 32, "category": "sea shells"}}
    splits = {"train": ["im_a.jpg", "im_b.jpg"], "val": [], "test": []}
    captions = {"im_a.jpg": "a bunch of red apples on a table"}

    paths = {}
    for name, obj in [("annotations", annotations), ("dims", dims), ("splits", splits), ("captions", captions)]:
        p = tmp_path / f"{name}.json"
        p.write_text(json.dumps(obj))
        paths[name] = p
    return paths
