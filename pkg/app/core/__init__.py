# app/core/__init__.py
# Core numerics: data model, estimators, theory, experiment harness.
