from .app import create_app
from .jobs import Job, JobRegistry

__all__ = ["create_app", "Job", "JobRegistry"]
