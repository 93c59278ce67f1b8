from enum import Enum
from typing import Optional


class AdversarialTerm(Enum):
    TDA = "tda"  # uniform weights
    UA = "ua"  # detection or proposal entropy weights
    UG = "ug"  # entropy weights gated on instance proposal entropy


class AblationMode(Enum):
    BASELINE = "Baseline"
    IMAGE_AL = "ImageAL"
    IMAGE_UA_AL = "ImageUaAL"
    INSTANCE_AL = "InstanceAL"
    INSTANCE_UA_AL = "InstanceUaAL"
    UADAN_NO_UGCL = "UaDAN_noUgCL"
    UADAN = "UaDAN"

    @property
    def image_term(self) -> Optional[AdversarialTerm]:
        return _IMAGE_TERMS[self]

    @property
    def instance_term(self) -> Optional[AdversarialTerm]:
        return _INSTANCE_TERMS[self]

    @property
    def uses_target(self) -> bool:
        return self.image_term is not None or self.instance_term is not None

    @staticmethod
    def parse(name: str) -> "AblationMode":
        for mode in AblationMode:
            if mode.value.lower() == name.lower() or mode.name.lower() == name.lower():
                return mode
        raise ValueError(
            f"Unknown mode '{name}', expected one of {[m.value for m in AblationMode]}"
        )


_IMAGE_TERMS = {
    AblationMode.BASELINE: None,
    AblationMode.IMAGE_AL: AdversarialTerm.TDA,
    AblationMode.IMAGE_UA_AL: AdversarialTerm.UA,
    AblationMode.INSTANCE_AL: None,
    AblationMode.INSTANCE_UA_AL: None,
    AblationMode.UADAN_NO_UGCL: AdversarialTerm.UA,
    AblationMode.UADAN: AdversarialTerm.UA,
}

_INSTANCE_TERMS = {
    AblationMode.BASELINE: None,
    AblationMode.IMAGE_AL: None,
    AblationMode.IMAGE_UA_AL: None,
    AblationMode.INSTANCE_AL: AdversarialTerm.TDA,
    AblationMode.INSTANCE_UA_AL: AdversarialTerm.UA,
    AblationMode.UADAN_NO_UGCL: AdversarialTerm.UA,
    AblationMode.UADAN: AdversarialTerm.UG,
}
