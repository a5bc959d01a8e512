"""Error taxonomy shared by the library, the CLI and the tool server."""


class ColpackError(Exception):
    """A domain error carrying a machine-readable code.

    The code is what tool-server clients and the CLI report; the message is
    for humans.
    """

    def __init__(self, code, message="", **details):
        self.code = code
        self.message = message or code
        self.details = details
        super().__init__(f"{code}: {self.message}")

    def to_dict(self):
        out = {"code": self.code, "message": self.message}
        if self.details:
            out["details"] = self.details
        return out
