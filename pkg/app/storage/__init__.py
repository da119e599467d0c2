# app/storage/__init__.py
# Series persistence (CSV / JSON files).
