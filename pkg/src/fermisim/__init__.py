"""fermisim: desk-scale laboratory for fermionic mean-field dynamics."""

__version__ = "0.1.0"
