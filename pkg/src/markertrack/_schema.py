from pydantic import ConfigDict

# frozen, no unknown keys, no NaN/inf
STRICT = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)
