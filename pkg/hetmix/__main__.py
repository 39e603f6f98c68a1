from hetmix.cli import run


def main() -> None:
    """Принимает ничего; возвращает None, завершая процесс кодом выхода команды hetmix."""
    raise SystemExit(run())


if __name__ == "__main__":
    main()
