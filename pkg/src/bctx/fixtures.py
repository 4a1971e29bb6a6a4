"""Forged APKs and small labelled corpora for tests and demos.

An APK spec is a JSON-compatible dict::

    {"package": "com.example.app",
     "permissions": ["android.permission.INTERNET"],
     "components": [["activity", "com.example.app.Main", ["android.intent.action.MAIN"]]],
     "dex": {"classes": [...], "strings": [...]},      # DexSpec.from_dict layout
     "strings_xml": ["http://example.com/api"],        # optional res/values/strings.xml bodies
     "binary_manifest": true}                          # AXML (default) or plain XML
"""

from __future__ import annotations

import json
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .apk import write_apk
from .axml import forge_axml, manifest_tree, tree_to_text
from .dex import DexSpec, forge_dex


def apk_entries(spec: dict) -> list[tuple[str, bytes]]:
    root = manifest_tree(
        spec["package"],
        spec.get("permissions", ()),
        [(k, n, list(a)) for k, n, a in spec.get("components", ())],
    )
    if spec.get("binary_manifest", True):
        manifest = forge_axml(root)
    else:
        manifest = tree_to_text(root).encode("utf-8")
    entries = [("AndroidManifest.xml", manifest)]
    dexes = spec.get("dexes") or [spec.get("dex", {})]
    for i, d in enumerate(dexes):
        entries.append(("classes.dex" if i == 0 else f"classes{i + 1}.dex", forge_dex(DexSpec.from_dict(d))))
    if spec.get("strings_xml"):
        body = "".join(f'<string name="s{i}">{escape(s)}</string>' for i, s in enumerate(spec["strings_xml"]))
        entries.append(("res/values/strings.xml", f"<resources>{body}</resources>".encode("utf-8")))
    return entries


def forge_apk(spec: dict, path) -> None:
    write_apk(path, apk_entries(spec))


# -- labelled corpus ---------------------------------------------------------

_BEHAVIORS = {
    "benign": {
        "sdk": [("Lcom/google/firebase/analytics/FirebaseAnalytics;", "logEvent")],
        "perms": ["android.permission.INTERNET"],
        "urls": ["https://api.example.org/v1"],
    },
    "adware": {
        "sdk": [("Lcom/applovin/sdk/AppLovinSdk;", "showAd"), ("Lcom/mopub/mobileads/MoPubView;", "loadAd"),
                ("Lcom/startapp/sdk/StartAppAd;", "showAd")],
        "perms": ["android.permission.INTERNET", "android.permission.SYSTEM_ALERT_WINDOW"],
        "urls": ["http://ads.track-click.net/r", "http://198.51.100.7/adserve"],
    },
    "payfraud": {
        "sdk": [("Lcom/alipay/sdk/app/PayTask;", "pay"), ("Lcom/unionpay/UPPayAssistEx;", "startPay")],
        "perms": ["android.permission.INTERNET", "android.permission.READ_PHONE_STATE"],
        "urls": ["https://pay.quick-order.cn/submit"],
    },
    "smstrojan": {
        "sdk": [("Lcom/umeng/analytics/MobclickAgent;", "onEvent")],
        "perms": ["android.permission.SEND_SMS", "android.permission.RECEIVE_BOOT_COMPLETED"],
        "urls": ["http://203.0.113.9/c2"],
    },
}
CORPUS_LABELS = tuple(sorted(_BEHAVIORS))


def _app_spec(label: str, index: int, rng: np.random.Generator) -> dict:
    beh = _BEHAVIORS[label]
    pkg = f"com.{label}.app{index}"
    pdesc = "L" + pkg.replace(".", "/") + "/"
    main = pdesc + "Main;"
    worker = pdesc + "Worker;"
    calls = [("invoke-static", owner, name, "()V") for owner, name in beh["sdk"]]
    calls = calls * int(rng.integers(1, 4))
    filler = [("op", int(op)) for op in rng.choice([0x00, 0x01, 0x12, 0x28], size=int(rng.integers(5, 60)))]
    urls = list(beh["urls"])
    components = [["activity", pkg + ".Main", ["android.intent.action.MAIN"]]]
    worker_super = "Ljava/lang/Object;"
    if label == "smstrojan":
        components.append(["receiver", pkg + ".Worker", ["android.intent.action.BOOT_COMPLETED"]])
        worker_super = "Landroid/content/BroadcastReceiver;"
    classes = [
        {"name": main, "superclass": "Landroid/app/Activity;", "methods": [
            {"name": "onCreate", "descriptor": "(Landroid/os/Bundle;)V",
             "instructions": [["const-string", u] for u in urls]
             + [["invoke-virtual", worker, "onReceive", "()V"]]
             + [list(c) for c in calls] + [list(f) for f in filler] + [["return-void"]]},
        ]},
        {"name": worker, "superclass": worker_super, "methods": [
            {"name": "onReceive", "descriptor": "()V",
             "instructions": [list(c) for c in calls[: int(rng.integers(1, len(calls) + 1))]] + [["return-void"]]},
        ]},
    ]
    for j in range(int(rng.integers(0, 4))):
        classes.append({"name": f"{pdesc}Util{j};", "methods": [
            {"name": "helper", "instructions": [["op", 0x01]] * int(rng.integers(1, 30)) + [["return-void"]]}]})
    return {
        "package": pkg,
        "permissions": beh["perms"],
        "components": components,
        "dex": {"classes": classes},
        "strings_xml": [f"{label} app {index}"],
        "binary_manifest": bool(index % 3),
    }


def forge_corpus(out_dir, n_per_class: int = 5, seed: int = 42, labels=CORPUS_LABELS) -> Path:
    """Write forged APKs and a ``manifest.jsonl`` describing them; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for label in labels:
        for i in range(n_per_class):
            app_id = f"{label}-{i:03d}"
            path = out / f"{app_id}.apk"
            forge_apk(_app_spec(label, i, rng), path)
            lines.append(json.dumps({"id": app_id, "path": path.name, "label": label}, sort_keys=True))
    manifest = out / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
