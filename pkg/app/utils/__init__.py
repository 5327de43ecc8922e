from .parallel import resolve_threads, map_slices

# io depends on app.services.field, which imports this package; import it as app.utils.io.
__all__ = [
    "resolve_threads", "map_slices"
]
