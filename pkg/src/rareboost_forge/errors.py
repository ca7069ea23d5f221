"""Exception types shared across the pipeline."""


class ForgeError(Exception):
    """Base class for all domain errors raised by rareboost_forge."""


class EmptyScene(ForgeError):
    pass


class InfeasiblePlacement(ForgeError):
    pass


class SchemaError(ForgeError):
    pass


class UnmappedLabel(ForgeError):
    def __init__(self, raw_id, source=""):
        self.raw_id = int(raw_id)
        where = f" in taxonomy '{source}'" if source else ""
        super().__init__(f"raw label id {self.raw_id} has no mapping{where}")


class UninitializedPrototype(ForgeError):
    def __init__(self, class_id, domain=""):
        self.class_id = int(class_id)
        where = f" in the {domain} bank" if domain else ""
        super().__init__(f"prototype for class {self.class_id} is not initialized{where}")


class ShapeError(ForgeError):
    pass


class FormatError(ForgeError):
    pass
