from typing import Optional


class DomainSyntaxError(ValueError):
    """도메인 파일 구문 오류 (행/열 포함)"""

    def __init__(self, message: str, line: int, column: int) -> None:
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class DomainSemanticError(ValueError):
    """도메인 파일 의미 오류 (문제 기호 포함)"""

    def __init__(self, message: str, symbol: Optional[str] = None) -> None:
        super().__init__(f"{message}: {symbol}" if symbol else message)
        self.symbol = symbol


class ConfigError(ValueError):
    """실험 설정 오류"""

    def __init__(self, message: str, key: Optional[str] = None) -> None:
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
