import hashlib
import logging
from functools import wraps

from dask.diagnostics import ProgressBar

logger = logging.getLogger(__name__)


def derive_seed(*parts):
    """
    Returns a 64-bit seed that depends only on ``parts``, stable across runs
    and platforms (unlike ``hash``).
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def provenance(label):
    """
    Decorator that stamps the call details of an experiment step onto the
    ``attrs`` of the xarray object it returns.
    Usage: place @provenance("eval_online") above the step definition.

    Only keyword arguments of plain types are recorded; the first positional
    argument is taken to be the experiment spec and contributes its seed.
    """

    def decorate(func):
        @wraps(func)
        def update_attrs(*args, **kwargs):
            result = func(*args, **kwargs)
            attrs = {
                "produced_by": "plansieve v0.0.1",
                "step": label,
                "step_function": "plansieve.harness." + func.__name__,
            }
            spec = args[0] if args else None
            if spec is not None and hasattr(spec, "seed"):
                attrs["seed"] = int(spec.seed)
            for name, value in sorted(kwargs.items()):
                if name != "quiet" and isinstance(value, (str, int, float, bool)):
                    attrs["arg_" + name] = value
            attrs.update(result.attrs)
            result.attrs = attrs
            return result

        return update_attrs

    return decorate


def progress_bar(func):
    """
    Decorator that computes the dask graph returned by ``func`` with a
    progress bar on stderr, unless called with ``quiet=True``.
    """

    @wraps(func)
    def pbar_wrapper(*args, quiet=False, scheduler="threads", **kwargs):
        graph = func(*args, **kwargs)
        if quiet:
            return graph.compute(scheduler=scheduler)
        logger.info("request in progress, this may take a while")
        with ProgressBar():
            return graph.compute(scheduler=scheduler)

    return pbar_wrapper
