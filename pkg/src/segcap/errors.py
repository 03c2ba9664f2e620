"""Exception hierarchy shared by all segcap modules."""


class SegcapError(ValueError):
    """Base class for every validation-style failure raised by segcap."""


class EmptySequence(SegcapError):
    pass


class MissingDurations(SegcapError):
    pass


class EmptyCorpus(SegcapError):
    pass


class EmptyReferences(SegcapError):
    pass


class EmptyCandidates(SegcapError):
    pass


class InsufficientCandidates(SegcapError):
    def __init__(self, image_id, have, need):
        self.image_id = image_id
        self.have = have
        self.need = need
        super().__init__(f"image {image_id!r} has {have} candidates, need {need}")


class ModelContract(SegcapError):
    pass


class TooLarge(SegcapError):
    pass


class MalformedRecord(SegcapError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class IdMismatch(SegcapError):
    def __init__(self, only_left, only_right):
        self.only_left = sorted(only_left)
        self.only_right = sorted(only_right)
        diff = sorted(set(only_left) | set(only_right))
        shown = ", ".join(diff[:10])
        more = f" (+{len(diff) - 10} more)" if len(diff) > 10 else ""
        super().__init__(f"image id sets differ: {shown}{more}")


class DuplicateKey(SegcapError):
    def __init__(self, key, lines):
        self.key = key
        self.lines = list(lines)
        super().__init__(f"duplicate key {key!r} on lines {self.lines}")
