from .app import create_app, issue_token

__all__ = ["create_app", "issue_token"]
