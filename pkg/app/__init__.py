# app/__init__.py
# Compressive Oja's algorithm with adaptive sensing.
