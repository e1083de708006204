# Config module