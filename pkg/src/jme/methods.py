"""Names of the moment-estimation methods shared across modules."""

import enum


class Method(str, enum.Enum):
    JME = "jme"
    LAMBDA_JME = "lambda-jme"
    IME = "ime"
    CS = "cs"
    PP = "pp"
    PP_DEBIASED = "pp-debiased"

    @classmethod
    def parse(cls, text: str) -> "Method":
        try:
            return cls(text.strip().lower())
        except ValueError:
            choices = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown method {text!r} (choose from {choices})") from None

    @property
    def is_pp(self) -> bool:
        return self in (Method.PP, Method.PP_DEBIASED)


DEFAULT_ALPHA = 0.5
DEFAULT_TAU = 1.0
