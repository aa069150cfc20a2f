from .app import create_app, run_local_service

__all__ = ["create_app", "run_local_service"]
