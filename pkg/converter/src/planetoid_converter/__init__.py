from planetoid_converter.convert import ConversionSummary, convert

__all__ = ["convert", "ConversionSummary"]
