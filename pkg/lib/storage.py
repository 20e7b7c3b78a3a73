import json
import os
import tempfile


def atomic_write_text(path, text):
    """Writes text to path via a temp file in the same directory + rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_json(path, payload, indent=2):
    atomic_write_text(path, json.dumps(payload, indent=indent, sort_keys=True) + '\n')


def read_json(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)
