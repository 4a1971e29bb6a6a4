from .forge import DexSpec, ForgeClass, ForgeMethod, dex_observable, forge_dex, spec_observable
from .parser import (
    ClassDef,
    CodeItem,
    ConstClass,
    ConstString,
    DexFile,
    DexHeader,
    EncodedMethod,
    Invoke,
    MethodRef,
    Other,
    iter_code,
    iter_strings,
    parse_dex,
)

__all__ = [
    "ClassDef", "CodeItem", "ConstClass", "ConstString", "DexFile", "DexHeader", "DexSpec",
    "EncodedMethod", "ForgeClass", "ForgeMethod", "Invoke", "MethodRef", "Other",
    "dex_observable", "forge_dex", "iter_code", "iter_strings", "parse_dex", "spec_observable",
]
